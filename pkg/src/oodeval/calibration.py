"""Threshold selection and the ID/OOD flagging rule.

Two distinct thresholds: the detector confidence threshold (chosen by mAP
sweep on the ID test set) and the per-method score threshold tau (chosen so
a target fraction of ID scores stays above it). The boundary is inclusive:
score >= tau keeps the prediction as ID.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, JoinError, ParameterError
from .records import DetectionRecord, GroundTruthObject
from .scoring import IdnessScore

UNKNOWN_CLASS = -1  # synthetic class index for OOD-flagged detections

VERDICT_ID = "id_keep"
VERDICT_OOD = "ood_flag"


@dataclass
class ThresholdReport:
    tau: float
    tpr_target: float
    achieved_tpr: float
    t_star: float | None = None
    sweep_table: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class FlaggedDetection:
    record: DetectionRecord
    idness: float
    verdict: str
    effective_class: int

    @property
    def is_flagged(self) -> bool:
        return self.verdict == VERDICT_OOD


def required_id_count(n: int, tpr_target: float) -> int:
    """ceil(tpr_target * n) with a guard against float artifacts (0.95*100 must give 95)."""
    return max(1, math.ceil(tpr_target * n - 1e-9))


def calibrate_tau(id_scores: Sequence[float], tpr_target: float) -> ThresholdReport:
    """Largest tau keeping at least ceil(tpr_target * n) ID scores at or above it."""
    scores = np.asarray(id_scores, dtype=np.float64)
    if scores.size == 0:
        raise InputError("cannot calibrate tau on an empty score set")
    if not 0.0 < tpr_target < 1.0:
        raise ParameterError(f"tpr_target must lie in (0, 1), got {tpr_target}")
    n = scores.size
    m = required_id_count(n, tpr_target)
    # the m-th largest score: exactly m scores are >= it when distinct, more with ties
    tau = float(np.sort(scores)[n - m])
    achieved = float(np.count_nonzero(scores >= tau)) / n
    return ThresholdReport(tau=tau, tpr_target=tpr_target, achieved_tpr=achieved)


def calibrate_t_star(
    detections: Sequence[DetectionRecord],
    ground_truth: Sequence[GroundTruthObject],
    candidate_grid: Sequence[float],
    iou_threshold: float = 0.5,
) -> ThresholdReport:
    """Sweep confidence thresholds over detections exported at threshold zero,
    maximizing mAP at the given IoU regime; ties resolve toward the larger threshold."""
    from .metrics.osod import map_at_iou  # deferred: metrics depends on calibration types

    if len(candidate_grid) == 0:
        raise ParameterError("candidate grid must be non-empty")
    sweep = []
    for t in sorted(candidate_grid):
        retained = [d for d in detections if d.confidence >= t]
        score = map_at_iou(retained, ground_truth, iou_threshold)
        sweep.append((float(t), float(score)))
    best = max(sweep, key=lambda pair: (pair[1], pair[0]))
    return ThresholdReport(
        tau=float("nan"),
        tpr_target=float("nan"),
        achieved_tpr=float("nan"),
        t_star=best[0],
        sweep_table=sweep,
    )


def apply_omega(
    records: Sequence[DetectionRecord],
    scores: Sequence[IdnessScore],
    tau: float,
) -> list[FlaggedDetection]:
    """Flag each detection OOD when its ID-ness falls below tau (score >= tau keeps ID)."""
    lookup = {(s.image_id, s.det_index): s.value for s in scores}
    if len(lookup) != len(scores):
        raise JoinError("duplicate (image_id, det_index) in score set")
    flagged = []
    for rec in sorted(records, key=lambda r: (r.image_id, r.det_index)):
        key = (rec.image_id, rec.det_index)
        if key not in lookup:
            raise JoinError(f"no score for record (image_id={key[0]} det_index={key[1]})")
        idness = lookup[key]
        keep = idness >= tau
        flagged.append(
            FlaggedDetection(
                record=rec,
                idness=idness,
                verdict=VERDICT_ID if keep else VERDICT_OOD,
                effective_class=rec.pred_class if keep else UNKNOWN_CLASS,
            )
        )
    return flagged
