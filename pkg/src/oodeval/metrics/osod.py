"""Ground-truth-aware open-set metrics: IoU matching, the TP/FP/FN^D/FN^M
outcome split, unknown precision/recall, interpolated AP, the normalized
open-set error, classwise mAP, and zero-prediction coverage.

Matching is greedy in ranking order with highest-IoU tie-breaking and
one-shot ground truth consumption (each GT box matched at most once).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..calibration import FlaggedDetection
from ..errors import InputError
from ..records import DetectionRecord, GroundTruthObject

OUTCOME_TP_U = "tp_u"
OUTCOME_FP_U = "fp_u"
OUTCOME_FN_M = "fn_m"
OUTCOME_ID_KEEP = "id_keep"


@dataclass
class MatchOutcome:
    tp_u: int
    fp_u: int
    fn_d: int  # ground-truth unknowns nothing overlapped (dismissed)
    fn_m: int  # ground-truth unknowns overlapped by an ID-kept detection (misclassified)
    per_detection: list[tuple[str, int, str, int | None]]
    total_gt_unknowns: int

    def __post_init__(self):
        if self.tp_u + self.fn_d + self.fn_m != self.total_gt_unknowns:
            raise AssertionError(
                f"conservation violated: {self.tp_u}+{self.fn_d}+{self.fn_m} "
                f"!= {self.total_gt_unknowns}"
            )


@dataclass(frozen=True)
class OsodResult:
    precision_u: float
    recall_u: float
    ap_u: float
    nose: float | None
    aose: int
    iou_threshold: float


def iou(a: np.ndarray, b: np.ndarray) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax2 <= ax1 or ay2 <= ay1 or bx2 <= bx1 or by2 <= by1:
        raise InputError(f"degenerate box: {a} vs {b}")
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union)


def _best_unmatched(
    det_bbox: np.ndarray,
    det_image: str,
    gt: Sequence[GroundTruthObject],
    gt_by_image: Mapping[str, list[int]],
    matched: np.ndarray,
    iou_threshold: float,
) -> int | None:
    """Highest-IoU unmatched same-image GT at or above the threshold; ties to lower index."""
    best_idx = None
    best_iou = iou_threshold
    for gi in gt_by_image.get(det_image, ()):
        if matched[gi]:
            continue
        value = iou(det_bbox, gt[gi].bbox)
        if value > best_iou or (best_idx is None and value == best_iou):
            best_iou = value
            best_idx = gi
        # equal IoU later keeps the earlier (lower) index
    return best_idx


def _index_by_image(gt: Sequence[GroundTruthObject]) -> dict[str, list[int]]:
    by_image: dict[str, list[int]] = {}
    for i, g in enumerate(gt):
        by_image.setdefault(g.image_id, []).append(i)
    return by_image


def match_unknowns(
    flagged: Sequence[FlaggedDetection],
    gt: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
    ranking: Mapping[tuple[str, int], float] | None = None,
) -> MatchOutcome:
    """Classify every detection and GT unknown into TP_U / FP_U / FN^M / FN^D.

    Stage 1 matches OOD-flagged detections in ranking order (default: most
    OOD-looking first). Stage 2 matches ID-kept detections by confidence
    against the remaining GT unknowns; each hit is a misclassified unknown.
    Stage 3 counts the leftover GT unknowns as dismissed.
    """
    gt = [g for g in gt if g.is_unknown]
    det_images = {f.record.image_id for f in flagged}
    gt_images = {g.image_id for g in gt}
    if flagged and gt and not (det_images & gt_images):
        # matching proceeds; it can only happen on the (empty) intersection, so
        # every GT unknown will be dismissed and every detection unmatched
        warnings.warn(
            "detection and ground-truth image sets are disjoint",
            RuntimeWarning,
        )

    if ranking is None:
        ranking = {(f.record.image_id, f.record.det_index): -f.idness for f in flagged}

    gt_by_image = _index_by_image(gt)
    matched = np.zeros(len(gt), dtype=bool)
    per_detection: list[tuple[str, int, str, int | None]] = []
    tp_u = fp_u = fn_m = 0

    ood_dets = [f for f in flagged if f.is_flagged]
    ood_dets.sort(
        key=lambda f: (
            -ranking[(f.record.image_id, f.record.det_index)],
            f.record.image_id,
            f.record.det_index,
        )
    )
    for f in ood_dets:
        hit = _best_unmatched(
            f.record.bbox, f.record.image_id, gt, gt_by_image, matched, iou_threshold
        )
        if hit is None:
            fp_u += 1
            per_detection.append((f.record.image_id, f.record.det_index, OUTCOME_FP_U, None))
        else:
            matched[hit] = True
            tp_u += 1
            per_detection.append((f.record.image_id, f.record.det_index, OUTCOME_TP_U, hit))

    id_dets = [f for f in flagged if not f.is_flagged]
    id_dets.sort(key=lambda f: (-f.record.confidence, f.record.image_id, f.record.det_index))
    for f in id_dets:
        hit = _best_unmatched(
            f.record.bbox, f.record.image_id, gt, gt_by_image, matched, iou_threshold
        )
        if hit is None:
            per_detection.append((f.record.image_id, f.record.det_index, OUTCOME_ID_KEEP, None))
        else:
            matched[hit] = True
            fn_m += 1
            per_detection.append((f.record.image_id, f.record.det_index, OUTCOME_FN_M, hit))

    fn_d = int(np.count_nonzero(~matched))
    per_detection.sort(key=lambda row: (row[0], row[1]))
    return MatchOutcome(
        tp_u=tp_u,
        fp_u=fp_u,
        fn_d=fn_d,
        fn_m=fn_m,
        per_detection=per_detection,
        total_gt_unknowns=len(gt),
    )


def precision_recall_unknown(outcome: MatchOutcome) -> tuple[float, float]:
    """(P_U, R_U); both 0 by convention when their denominator is 0."""
    denom_p = outcome.tp_u + outcome.fp_u
    precision = outcome.tp_u / denom_p if denom_p else 0.0
    denom_r = outcome.total_gt_unknowns
    recall = outcome.tp_u / denom_r if denom_r else 0.0
    return float(precision), float(recall)


def nose(outcome: MatchOutcome) -> float | None:
    """Fraction of GT unknowns taken for an ID class; None when there are no GT unknowns."""
    if outcome.total_gt_unknowns == 0:
        return None
    return outcome.fn_m / outcome.total_gt_unknowns


def _ap_from_pr(precision: np.ndarray, recall: np.ndarray) -> float:
    """All-point interpolation: sum of recall increments times the precision envelope."""
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def ap_unknown(
    flagged: Sequence[FlaggedDetection],
    gt: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
    ranking: Mapping[tuple[str, int], float] | None = None,
) -> float:
    """Interpolated AP of the unknown class over the OOD-flagged detections."""
    gt = [g for g in gt if g.is_unknown]
    if len(gt) == 0:
        warnings.warn("no GT unknowns; AP_U defined as 0", RuntimeWarning)
        return 0.0
    ood_dets = [f for f in flagged if f.is_flagged]
    if ranking is None:
        ranking = {(f.record.image_id, f.record.det_index): -f.idness for f in ood_dets}
    ood_dets.sort(
        key=lambda f: (
            -ranking[(f.record.image_id, f.record.det_index)],
            f.record.image_id,
            f.record.det_index,
        )
    )
    gt_by_image = _index_by_image(gt)
    matched = np.zeros(len(gt), dtype=bool)
    tp = np.zeros(len(ood_dets))
    fp = np.zeros(len(ood_dets))
    for i, f in enumerate(ood_dets):
        hit = _best_unmatched(
            f.record.bbox, f.record.image_id, gt, gt_by_image, matched, iou_threshold
        )
        if hit is None:
            fp[i] = 1.0
        else:
            matched[hit] = True
            tp[i] = 1.0
    if len(ood_dets) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / len(gt)
    precision = tp_cum / (tp_cum + fp_cum)
    return _ap_from_pr(precision, recall)


def osod_metrics(
    flagged: Sequence[FlaggedDetection],
    gt: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
    ranking: Mapping[tuple[str, int], float] | None = None,
) -> tuple[OsodResult, MatchOutcome]:
    outcome = match_unknowns(flagged, gt, iou_threshold, ranking)
    p_u, r_u = precision_recall_unknown(outcome)
    return (
        OsodResult(
            precision_u=p_u,
            recall_u=r_u,
            ap_u=ap_unknown(flagged, gt, iou_threshold, ranking),
            nose=nose(outcome),
            aose=outcome.fn_m,
            iou_threshold=iou_threshold,
        ),
        outcome,
    )


def map_at_iou(
    detections: Sequence[DetectionRecord],
    gt: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
) -> float:
    """Classwise AP averaged over classes with at least one GT object.

    pred_class and category_id must live in the same index space; callers
    translate through the category table when they differ.
    """
    classes = sorted({g.category_id for g in gt})
    if not classes:
        raise InputError("no class has ground truth")
    aps = []
    for cls in classes:
        cls_gt = [g for g in gt if g.category_id == cls]
        cls_dets = sorted(
            (d for d in detections if d.pred_class == cls),
            key=lambda d: (-d.confidence, d.image_id, d.det_index),
        )
        gt_by_image = _index_by_image(cls_gt)
        matched = np.zeros(len(cls_gt), dtype=bool)
        tp = np.zeros(len(cls_dets))
        fp = np.zeros(len(cls_dets))
        for i, d in enumerate(cls_dets):
            hit = _best_unmatched(d.bbox, d.image_id, cls_gt, gt_by_image, matched, iou_threshold)
            if hit is None:
                fp[i] = 1.0
            else:
                matched[hit] = True
                tp[i] = 1.0
        if len(cls_dets) == 0:
            aps.append(0.0)
            continue
        tp_cum = np.cumsum(tp)
        fp_cum = np.cumsum(fp)
        aps.append(_ap_from_pr(tp_cum / (tp_cum + fp_cum), tp_cum / len(cls_gt)))
    return float(np.mean(aps))


def coverage_stats(
    detections: Sequence[DetectionRecord],
    image_manifest: Sequence[str],
) -> tuple[float, dict[str, int]]:
    """Fraction of manifest images with zero detections, plus per-image counts."""
    if image_manifest is None or len(image_manifest) == 0:
        raise InputError("coverage needs the full image universe; manifest missing or empty")
    counts = {img: 0 for img in image_manifest}
    for d in detections:
        if d.image_id in counts:
            counts[d.image_id] += 1
    zero = sum(1 for v in counts.values() if v == 0)
    return zero / len(image_manifest), counts
