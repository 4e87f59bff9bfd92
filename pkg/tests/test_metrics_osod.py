"""Open-set matching and metrics: hand-verified scenes, conservation,
permutation determinism, greedy-rule replay parity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import mk_det, mk_flagged, mk_gt
from oodeval.errors import InputError
from oodeval.metrics.osod import (
    ap_unknown,
    coverage_stats,
    iou,
    map_at_iou,
    match_unknowns,
    nose,
    osod_metrics,
    precision_recall_unknown,
)


def test_iou_examples():
    a = np.array([0.0, 0.0, 2.0, 2.0])
    assert iou(a, a) == 1.0
    assert iou(a, np.array([5.0, 5.0, 6.0, 6.0])) == 0.0
    assert iou(a, np.array([1.0, 0.0, 3.0, 2.0])) == pytest.approx(1.0 / 3.0, abs=1e-15)
    with pytest.raises(InputError):
        iou(a, np.array([1.0, 1.0, 1.0, 2.0]))


def test_perfect_tp():
    det = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-1.0, flagged=True)
    gt = [mk_gt("a", (0, 0, 10, 10))]
    outcome = match_unknowns([det], gt)
    assert (outcome.tp_u, outcome.fp_u, outcome.fn_d, outcome.fn_m) == (1, 0, 0, 0)


def test_ignored_unknown_is_dismissed():
    outcome = match_unknowns([], [mk_gt("a", (0, 0, 10, 10))])
    assert outcome.fn_d == 1
    assert nose(outcome) == 0.0


def test_two_unknown_scene_nose_half():
    gt = [mk_gt("a", (0, 0, 10, 10)), mk_gt("a", (20, 20, 30, 30))]
    flagged = [
        mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-2.0, flagged=True),
        mk_flagged(mk_det("a", 1, [2.0, 0.0], bbox=(20, 20, 30, 30)), idness=5.0, flagged=False),
    ]
    outcome = match_unknowns(flagged, gt)
    assert (outcome.tp_u, outcome.fn_m, outcome.fn_d) == (1, 1, 0)
    assert nose(outcome) == 0.5
    assert nose(outcome) * outcome.total_gt_unknowns == outcome.fn_m  # integer identity


def test_precision_recall_examples():
    det = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-1.0, flagged=True)
    outcome = match_unknowns([det], [mk_gt("a", (0, 0, 10, 10))])
    assert precision_recall_unknown(outcome) == (1.0, 1.0)

    # no unknown predictions at all: P_U = 0 by convention
    kept = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(50, 50, 60, 60)), idness=9.0, flagged=False)
    outcome = match_unknowns([kept], [mk_gt("a", (0, 0, 10, 10))])
    assert precision_recall_unknown(outcome) == (0.0, 0.0)

    # tp=1, fp=1, fn_d=1
    gt = [mk_gt("a", (0, 0, 10, 10)), mk_gt("b", (0, 0, 10, 10))]
    flagged = [
        mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-1.0, flagged=True),
        mk_flagged(mk_det("a", 1, [1.0, 0.0], bbox=(70, 70, 80, 80)), idness=-0.5, flagged=True),
    ]
    outcome = match_unknowns(flagged, gt)
    assert (outcome.tp_u, outcome.fp_u, outcome.fn_d) == (1, 1, 1)
    assert precision_recall_unknown(outcome) == (0.5, 0.5)


def test_nose_extremes():
    gt = [mk_gt("a", (0, 0, 10, 10))]
    kept = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=9.0, flagged=False)
    outcome = match_unknowns([kept], gt)
    assert nose(outcome) == 1.0
    empty = match_unknowns([], [])
    assert nose(empty) is None


def test_ap_examples():
    gt = [mk_gt("a", (0, 0, 10, 10))]
    tp = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-3.0, flagged=True)
    assert ap_unknown([tp], gt) == 1.0

    # FP ranked first, then the TP: all-point interpolation gives 0.5
    fp = mk_flagged(mk_det("a", 1, [1.0, 0.0], bbox=(50, 50, 60, 60)), idness=-9.0, flagged=True)
    assert ap_unknown([fp, tp], gt) == 0.5

    only_fp = [fp]
    assert ap_unknown(only_fp, gt) == 0.0

    with pytest.warns(RuntimeWarning):
        assert ap_unknown([tp], []) == 0.0


def test_ap_monotonicity():
    gt = [mk_gt("a", (0, 0, 10, 10)), mk_gt("b", (0, 0, 10, 10))]
    base = [
        mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-1.0, flagged=True),
    ]
    ap_before = ap_unknown(base, gt)
    # a fresh TP at the top of the ranking never decreases AP
    top_tp = mk_flagged(mk_det("b", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-99.0, flagged=True)
    assert ap_unknown(base + [top_tp], gt) >= ap_before
    # an FP at the bottom never changes recall (and here not AP either)
    bottom_fp = mk_flagged(mk_det("a", 5, [1.0, 0.0], bbox=(70, 70, 80, 80)), idness=-0.001,
                           flagged=True)
    assert ap_unknown(base + [bottom_fp], gt) == ap_before


def test_map_hand_scenes():
    gt = [mk_gt("a", (0, 0, 10, 10), category_id=0, is_unknown=False)]
    tp = mk_det("a", 0, [2.0, 0.0], bbox=(0, 0, 10, 10))
    assert map_at_iou([tp], gt) == 1.0

    # class with GT but zero detections pulls the mean down
    gt2 = gt + [mk_gt("b", (0, 0, 10, 10), category_id=1, is_unknown=False)]
    assert map_at_iou([tp], gt2) == 0.5

    # two-class scene with hand PR tables:
    # class 0: dets [TP conf .88, FP conf .62] -> AP = 1.0 (trailing FP free)
    # class 1: dets [FP conf .88, TP conf .62] -> AP = 0.5
    gt3 = [
        mk_gt("a", (0, 0, 10, 10), category_id=0, is_unknown=False),
        mk_gt("a", (20, 20, 30, 30), category_id=1, is_unknown=False),
    ]
    dets = [
        mk_det("a", 0, [2.0, 0.0], bbox=(0, 0, 10, 10)),
        mk_det("a", 1, [0.5, 0.0], bbox=(50, 50, 60, 60)),
        mk_det("a", 2, [0.0, 2.0], bbox=(70, 70, 80, 80)),
        mk_det("a", 3, [0.0, 0.5], bbox=(20, 20, 30, 30)),
    ]
    assert map_at_iou(dets, gt3) == pytest.approx(0.75, abs=1e-15)

    with pytest.raises(InputError):
        map_at_iou(dets, [])


def test_coverage():
    dets = [mk_det("a", 0, [1.0, 0.0])]
    assert coverage_stats(dets, ["a"])[0] == 0.0
    assert coverage_stats([], list("abcdefghij"))[0] == 1.0
    manifest = [f"im{i:03d}" for i in range(100)]
    dets = [mk_det(f"im{i:03d}", 0, [1.0, 0.0]) for i in range(55)]
    frac, counts = coverage_stats(dets, manifest)
    assert frac == 0.45
    assert counts["im000"] == 1 and counts["im099"] == 0
    with pytest.raises(InputError):
        coverage_stats(dets, [])


def test_disjoint_universes_warn():
    det = mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=0.0, flagged=True)
    gt = [mk_gt("b", (0, 0, 10, 10))]
    with pytest.warns(RuntimeWarning, match="disjoint"):
        outcome = match_unknowns([det], gt)
    # nothing can match across disjoint universes: the GT is dismissed,
    # the detection is an unmatched unknown prediction
    assert outcome.total_gt_unknowns == 1
    assert (outcome.tp_u, outcome.fp_u, outcome.fn_d) == (0, 1, 1)


# ---------------------------------------------------------------------------
# randomized scenes


def greedy_replay_oracle(flagged, gt, iou_threshold, ranking):
    """Pure-python replay of the three-stage greedy rule."""
    gt = [g for g in gt if g.is_unknown]
    matched = [False] * len(gt)
    tp = fp = fn_m = 0

    def best(det):
        cands = []
        for i, g in enumerate(gt):
            if matched[i] or g.image_id != det.image_id:
                continue
            v = oracles_iou(det.bbox, g.bbox)
            if v >= iou_threshold:
                cands.append((-v, i))
        if not cands:
            return None
        cands.sort()
        return cands[0][1]

    stage1 = sorted(
        (f for f in flagged if f.is_flagged),
        key=lambda f: (-ranking[(f.record.image_id, f.record.det_index)],
                       f.record.image_id, f.record.det_index),
    )
    for f in stage1:
        hit = best(f.record)
        if hit is None:
            fp += 1
        else:
            matched[hit] = True
            tp += 1
    stage2 = sorted(
        (f for f in flagged if not f.is_flagged),
        key=lambda f: (-f.record.confidence, f.record.image_id, f.record.det_index),
    )
    for f in stage2:
        hit = best(f.record)
        if hit is not None:
            matched[hit] = True
            fn_m += 1
    fn_d = matched.count(False)
    return tp, fp, fn_d, fn_m


def oracles_iou(a, b):
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def random_scene(rng, max_boxes=10):
    n_det = int(rng.integers(0, max_boxes + 1))
    n_gt = int(rng.integers(0, max_boxes + 1))
    images = ["imA", "imB"]
    flagged = []
    for i in range(n_det):
        x1, y1 = rng.uniform(0, 30, size=2)
        w, h = rng.uniform(2, 20, size=2)
        det = mk_det(
            str(rng.choice(images)), i, rng.normal(size=2) * 2, bbox=(x1, y1, x1 + w, y1 + h)
        )
        flagged.append(mk_flagged(det, idness=float(rng.normal()), flagged=bool(rng.random() < 0.5)))
    gt = []
    for _ in range(n_gt):
        x1, y1 = rng.uniform(0, 30, size=2)
        w, h = rng.uniform(2, 20, size=2)
        gt.append(mk_gt(str(rng.choice(images)), (x1, y1, x1 + w, y1 + h)))
    return flagged, gt


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conservation_and_permutation_determinism(seed):
    rng = np.random.default_rng(seed)
    flagged, gt = random_scene(rng)
    outcome = match_unknowns(flagged, gt)
    assert outcome.tp_u + outcome.fn_d + outcome.fn_m == outcome.total_gt_unknowns
    assert len(outcome.per_detection) == len(flagged)
    tags = {(img, idx) for img, idx, _, _ in outcome.per_detection}
    assert len(tags) == len(flagged)  # partition over detections
    # permutation of the detection input order changes nothing: ordering is
    # re-derived from ranking and ids
    perm = list(rng.permutation(len(flagged)))
    outcome2 = match_unknowns([flagged[i] for i in perm], gt, 0.5)
    assert (outcome.tp_u, outcome.fp_u, outcome.fn_d, outcome.fn_m) == (
        outcome2.tp_u, outcome2.fp_u, outcome2.fn_d, outcome2.fn_m
    )
    assert outcome.per_detection == outcome2.per_detection


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_matches_replay_oracle_small_scenes(seed):
    rng = np.random.default_rng(seed)
    flagged, gt = random_scene(rng, max_boxes=5)
    ranking = {(f.record.image_id, f.record.det_index): -f.idness for f in flagged}
    outcome = match_unknowns(flagged, gt, 0.5, ranking)
    expected = greedy_replay_oracle(flagged, gt, 0.5, ranking)
    assert (outcome.tp_u, outcome.fp_u, outcome.fn_d, outcome.fn_m) == expected


def test_osod_metrics_bundle():
    gt = [mk_gt("a", (0, 0, 10, 10)), mk_gt("a", (20, 20, 30, 30))]
    flagged = [
        mk_flagged(mk_det("a", 0, [1.0, 0.0], bbox=(0, 0, 10, 10)), idness=-2.0, flagged=True),
        mk_flagged(mk_det("a", 1, [2.0, 0.0], bbox=(20, 20, 30, 30)), idness=5.0, flagged=False),
    ]
    result, outcome = osod_metrics(flagged, gt)
    assert result.nose == 0.5
    assert result.aose == 1
    assert result.recall_u == 0.5
    assert result.precision_u == 1.0
