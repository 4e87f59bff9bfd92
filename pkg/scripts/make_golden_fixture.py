#!/usr/bin/env python3
"""Regenerate the end-to-end golden fixture under tests/fixtures/golden/.

Builds a seeded synthetic benchmark (3 ID classes, 4-d features, two OOD
splits), runs the full pipeline on two methods, verifies the headline
numbers of the resulting report against the independent test oracles, and
freezes the report plus its csv/markdown tables as golden files.

Run from the repository root:  python3 scripts/make_golden_fixture.py
"""

import os
import sys

import numpy as np

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO, "tests"))
sys.path.insert(0, os.path.join(REPO, "src"))

import oracles  # noqa: E402  (tests/oracles.py)
from oodeval import records as rio  # noqa: E402
from oodeval.calibration import required_id_count  # noqa: E402
from oodeval.pipeline import emit_tables, load_config, run_pipeline  # noqa: E402
from oodeval.records import CategoryEntry, CategoryTable, DetectionRecord, GroundTruthObject  # noqa: E402
from oodeval.tensorio import HeadWeights, save_head  # noqa: E402

FIXTURE = os.path.join(REPO, "tests", "fixtures", "golden")

NUM_CLASSES = 3
DIM = 4
CLASS_MEANS = np.array(
    [[2.0, 0.0, 0.0, 1.0], [0.0, 2.0, 1.0, 0.0], [0.0, 0.5, -2.0, 0.5]]
)


def det(rng, image_id, det_index, logits, bbox, features):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    conf = float(1.0 / np.exp(shifted).sum())
    return DetectionRecord(
        image_id=image_id,
        det_index=det_index,
        bbox=np.asarray(bbox, dtype=np.float64),
        pred_class=int(np.argmax(logits)),
        confidence=conf,
        logits=logits,
        features=np.asarray(features, dtype=np.float64),
    )


def id_like(rng, image_id, det_index, bbox):
    cls = int(rng.integers(0, NUM_CLASSES))
    features = CLASS_MEANS[cls] + 0.3 * rng.normal(size=DIM)
    logits = np.full(NUM_CLASSES, -2.0) + 0.4 * rng.normal(size=NUM_CLASSES)
    logits[cls] = 3.0 + 0.5 * rng.normal()
    return det(rng, image_id, det_index, logits, bbox, features)


def ood_like(rng, image_id, det_index, bbox, confusable=False):
    cls = int(rng.integers(0, NUM_CLASSES))
    if confusable:
        # looks just like an ID object: fools both output- and feature-space scores
        features = CLASS_MEANS[cls] + 0.35 * rng.normal(size=DIM)
        logits = np.full(NUM_CLASSES, -2.0) + 0.4 * rng.normal(size=NUM_CLASSES)
        logits[cls] = 3.0 + 0.5 * rng.normal()
    else:
        features = 1.5 * rng.normal(size=DIM) + np.array([1.0, 1.0, 1.0, 1.0])
        logits = 0.8 * rng.normal(size=NUM_CLASSES)
        logits[cls] += 1.2  # mildly confident, wrong by construction
    return det(rng, image_id, det_index, logits, bbox, features)


def random_box(rng):
    x1, y1 = rng.uniform(0, 60, size=2)
    w, h = rng.uniform(8, 30, size=2)
    return (float(x1), float(y1), float(x1 + w), float(y1 + h))


def build_split(rng, name, n_images, n_empty, origin):
    """Detections + GT with all four outcome flavors present."""
    records, gts = [], []
    image_ids = [f"{name}{i:03d}" for i in range(n_images)]
    for i, image_id in enumerate(image_ids):
        roll = i % 4
        n_det = int(rng.integers(1, 3))
        for j in range(n_det):
            # roll 1 leads with an ID-lookalike so its GT tends to become FN^M
            records.append(
                ood_like(rng, image_id, j, random_box(rng), confusable=(roll == 1 and j == 0))
            )
        lead = records[-n_det]
        if roll in (0, 1):
            # GT under the first detection's box: becomes TP_U or FN^M
            gts.append(
                GroundTruthObject(image_id, np.asarray(lead.bbox), 100, True, origin)
            )
        elif roll == 2:
            gts.append(
                GroundTruthObject(
                    image_id, np.asarray(random_box(rng)) + 200.0, 100, True, origin
                )
            )  # overlaps nothing: FN^D
        # roll 3: image contributes only unmatched detections (FP_U fodder)
    manifest = image_ids + [f"{name}_empty{i:02d}" for i in range(n_empty)]
    return records, gts, manifest


def main():
    os.makedirs(FIXTURE, exist_ok=True)
    rng = np.random.default_rng(20240217)

    categories = CategoryTable(
        tuple(
            [CategoryEntry(i, f"class_{i}", "id") for i in range(NUM_CLASSES)]
            + [CategoryEntry(100, "novel_thing", "ood_far")]
        )
    )
    rio.write_categories(os.path.join(FIXTURE, "categories.tsv"), categories)

    head = HeadWeights(rng.normal(size=(NUM_CLASSES, DIM)), rng.normal(size=NUM_CLASSES))
    save_head(os.path.join(FIXTURE, "head.fmyc"), head)

    train = []
    for i in range(15):
        for j in range(int(rng.integers(3, 6))):
            train.append(id_like(rng, f"train{i:03d}", j, random_box(rng)))
    rio.write_detections(os.path.join(FIXTURE, "train.tsv"), train)

    id_val = []
    for i in range(20):
        for j in range(int(rng.integers(1, 4))):
            id_val.append(id_like(rng, f"val{i:03d}", j, random_box(rng)))
    rio.write_detections(os.path.join(FIXTURE, "id_val.tsv"), id_val)

    near_records, near_gt, near_manifest = build_split(rng, "near", 12, 3, "coco_near")
    far_records, far_gt, far_manifest = build_split(rng, "far", 8, 2, "oi_far")
    rio.write_detections(os.path.join(FIXTURE, "ood_near.tsv"), near_records)
    rio.write_ground_truth(os.path.join(FIXTURE, "ood_near_gt.tsv"), near_gt)
    rio.write_image_list(os.path.join(FIXTURE, "ood_near_images.tsv"), near_manifest)
    rio.write_detections(os.path.join(FIXTURE, "ood_far.tsv"), far_records)
    rio.write_ground_truth(os.path.join(FIXTURE, "ood_far_gt.tsv"), far_gt)
    rio.write_image_list(os.path.join(FIXTURE, "ood_far_images.tsv"), far_manifest)

    with open(os.path.join(FIXTURE, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(
            "\n".join(
                [
                    "# golden fixture run configuration",
                    "architecture = toy",
                    "id_dataset = synthetic_id",
                    "methods = mahalanobis,msp",
                    "categories = categories.tsv",
                    "head = head.fmyc",
                    "train_records = train.tsv",
                    "id_records = id_val.tsv",
                    "tpr_target = 0.95",
                    "iou_threshold = 0.5",
                    "ap_ranking = ood_margin",
                    "seed = 0",
                    "ood.near.records = ood_near.tsv",
                    "ood.near.gt = ood_near_gt.tsv",
                    "ood.near.images = ood_near_images.tsv",
                    "ood.far.records = ood_far.tsv",
                    "ood.far.gt = ood_far_gt.tsv",
                    "ood.far.images = ood_far_images.tsv",
                    "",
                ]
            )
        )

    config = load_config(os.path.join(FIXTURE, "config.cfg"))
    report = run_pipeline(config)

    # oracle check before freezing: recompute the msp row from raw inputs
    from oodeval.scoring.output import msp_score

    id_msp = [oracles.msp_oracle(r.logits) for r in id_val]
    near_msp = [oracles.msp_oracle(r.logits) for r in near_records]
    row = next(r for r in report.rows if r.method == "msp" and r.ood_split == "near")
    assert oracles.rel_err(row.auroc, oracles.auroc_pairs_oracle(id_msp, near_msp)) <= 1e-12
    m = required_id_count(len(id_msp), 0.95)
    assert oracles.rel_err(row.fpr95, oracles.fpr_sweep_oracle(id_msp, near_msp, m)) <= 1e-12
    # the threshold selection logic, swept exhaustively over the engine's scores
    id_msp_engine = [msp_score(r.logits) for r in id_val]
    assert row.tau == oracles.tau_sweep_oracle(id_msp_engine, m)
    assert oracles.rel_err(row.tau, oracles.tau_sweep_oracle(id_msp, m)) <= 1e-12
    zero_near = sum(1 for img in near_manifest if not any(r.image_id == img for r in near_records))
    assert row.coverage == zero_near / len(near_manifest)
    counts = {
        "tp_fn": sum(1 for g in near_gt),
    }
    assert counts["tp_fn"] > 0  # the scene exercises the matcher

    report.save(os.path.join(FIXTURE, "golden_report.json"))
    emit_tables(report, "csv", os.path.join(FIXTURE, "golden_report.csv"))
    emit_tables(report, "markdown", os.path.join(FIXTURE, "golden_report.md"))
    print(f"wrote fixture to {FIXTURE}: {len(report.rows)} rows")
    for r in report.rows:
        print(
            f"  {r.method:12s} {r.ood_split:5s} auroc={r.auroc:.4f} fpr95={r.fpr95:.4f} "
            f"nose={r.nose} ap_u={r.ap_u:.4f} p_u={r.p_u:.4f} r_u={r.r_u:.4f} "
            f"coverage={r.coverage}"
        )


if __name__ == "__main__":
    main()
