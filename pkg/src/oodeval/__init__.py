"""Evaluation engine for out-of-distribution object detection.

Fits and applies post-hoc per-object scoring functions to exported detector
outputs, calibrates decision thresholds, and computes both ID/OOD separation
metrics and ground-truth-aware open-set metrics, plus the benchmark's
semantic-split curation pipeline.
"""

__version__ = "0.1.0"
