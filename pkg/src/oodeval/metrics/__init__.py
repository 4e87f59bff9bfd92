from .binary import BinaryMetricResult, auroc, binary_metrics, fpr_at_tpr
from .osod import (
    MatchOutcome,
    OsodResult,
    ap_unknown,
    coverage_stats,
    iou,
    map_at_iou,
    match_unknowns,
    nose,
    osod_metrics,
    precision_recall_unknown,
)

__all__ = [
    "BinaryMetricResult",
    "MatchOutcome",
    "OsodResult",
    "ap_unknown",
    "auroc",
    "binary_metrics",
    "coverage_stats",
    "fpr_at_tpr",
    "iou",
    "map_at_iou",
    "match_unknowns",
    "nose",
    "osod_metrics",
    "precision_recall_unknown",
]
