#!/usr/bin/env python3
"""Run all twelve scoring methods end-to-end on a generated synthetic benchmark.

Builds an ID/OOD detection export with features, head weights, and latent
feature maps in a temp directory, runs the full pipeline, and prints the
report table. Useful as a smoke test and a worked example of the file
formats.

Usage: python3 scripts/run_synthetic_demo.py [outdir]
"""

import os
import sys
import tempfile

import numpy as np

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO, "src"))

from oodeval import records as rio  # noqa: E402
from oodeval.pipeline import OodSplitSpec, RunConfig, emit_tables, run_pipeline  # noqa: E402
from oodeval.records import CategoryEntry, CategoryTable, DetectionRecord, GroundTruthObject  # noqa: E402
from oodeval.scoring import ScoringConfig  # noqa: E402
from oodeval.scoring.latent import pool_channels, roi_align  # noqa: E402
from oodeval.tensorio import FeatureMapRecord, HeadWeights, save_feature_maps, save_head  # noqa: E402

NUM_CLASSES = 3
DIM = 8
N_CHANNELS = 4
MAP_SIZE = 16
SCALE = 0.25  # 64-pixel images, 16-cell maps


def make_map(rng, image_id, shift=0.0):
    data = rng.normal(loc=shift, scale=1.0, size=(N_CHANNELS, MAP_SIZE, MAP_SIZE))
    return FeatureMapRecord(image_id, "demo_layer", data, SCALE)


def make_record(rng, head, image_id, det_index, fmap, id_like=True):
    x1, y1 = rng.uniform(0, 40, size=2)
    w, h = rng.uniform(8, 22, size=2)
    bbox = (float(x1), float(y1), float(x1 + w), float(y1 + h))
    cls = int(rng.integers(0, NUM_CLASSES))
    if id_like:
        features = np.zeros(DIM)
        features[cls] = 3.0
        features = features + 0.4 * rng.normal(size=DIM)
    else:
        features = rng.normal(size=DIM) * 1.6 + 0.8
    logits = head.W @ features + head.b
    crop, _ = roi_align(fmap, np.asarray(bbox), R=9)
    pooled = pool_channels(crop)
    shifted = logits - logits.max()
    return DetectionRecord(
        image_id=image_id,
        det_index=det_index,
        bbox=np.asarray(bbox),
        pred_class=int(np.argmax(logits)),
        confidence=float(1.0 / np.exp(shifted).sum()),
        logits=logits,
        features=features,
        latent_pooled=pooled,
    )


def build(outdir):
    rng = np.random.default_rng(7)
    head = HeadWeights(rng.normal(size=(NUM_CLASSES, DIM)), 0.1 * rng.normal(size=NUM_CLASSES))
    save_head(os.path.join(outdir, "head.fmyc"), head)

    categories = CategoryTable(
        tuple(
            [CategoryEntry(i, f"class_{i}", "id") for i in range(NUM_CLASSES)]
            + [CategoryEntry(50, "novelty", "ood_far")]
        )
    )
    rio.write_categories(os.path.join(outdir, "categories.tsv"), categories)

    def dataset(prefix, n_images, id_like, shift, dets_per_image=(1, 4)):
        records, maps, gts = [], [], []
        for i in range(n_images):
            image_id = f"{prefix}{i:03d}"
            fmap = make_map(rng, image_id, shift)
            maps.append(fmap)
            for j in range(int(rng.integers(*dets_per_image))):
                records.append(make_record(rng, head, image_id, j, fmap, id_like))
            if not id_like and records and records[-1].image_id == image_id:
                if i % 3 != 2:
                    gts.append(
                        GroundTruthObject(image_id, records[-1].bbox.copy(), 50, True, prefix)
                    )
                else:
                    far_box = np.asarray([50.0, 50.0, 62.0, 62.0])
                    gts.append(GroundTruthObject(image_id, far_box, 50, True, prefix))
        return records, maps, gts

    train, train_maps, _ = dataset("train", 30, id_like=True, shift=0.0)
    rio.write_detections(os.path.join(outdir, "train.tsv"), train)
    save_feature_maps(os.path.join(outdir, "train_maps.fmyc"), train_maps)

    id_val, id_maps, _ = dataset("val", 25, id_like=True, shift=0.0)
    rio.write_detections(os.path.join(outdir, "id_val.tsv"), id_val)
    save_feature_maps(os.path.join(outdir, "id_maps.fmyc"), id_maps)

    ood, ood_maps, ood_gt = dataset("ood", 20, id_like=False, shift=1.5)
    rio.write_detections(os.path.join(outdir, "ood.tsv"), ood)
    save_feature_maps(os.path.join(outdir, "ood_maps.fmyc"), ood_maps)
    rio.write_ground_truth(os.path.join(outdir, "ood_gt.tsv"), ood_gt)
    rio.write_image_list(
        os.path.join(outdir, "ood_images.tsv"),
        sorted({r.image_id for r in ood}) + ["ood_unseen00", "ood_unseen01"],
    )


def main():
    outdir = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="oodeval_demo_")
    os.makedirs(outdir, exist_ok=True)
    build(outdir)

    config = RunConfig(
        methods=["msp", "energy", "gen", "knn", "mahalanobis", "ddu",
                 "vim", "ash", "dice", "react", "dice_react", "lard"],
        categories="categories.tsv",
        id_records="id_val.tsv",
        train_records="train.tsv",
        head="head.fmyc",
        train_feature_maps="train_maps.fmyc",
        ood_splits=[
            OodSplitSpec("demo", "ood.tsv", "ood_gt.tsv", "ood_images.tsv", "ood_maps.fmyc")
        ],
        architecture="synthetic",
        id_dataset="demo_id",
        scoring=ScoringConfig(vim_dim=4),
        base=outdir,
    )
    report = run_pipeline(config, out_dir=os.path.join(outdir, "out"))
    emit_tables(report, "markdown", os.path.join(outdir, "out", "report.md"))
    print(open(os.path.join(outdir, "out", "report.md")).read())
    if report.metadata["aborted_rows"]:
        print("aborted:", report.metadata["aborted_rows"])
    print(f"artifacts in {outdir}")


if __name__ == "__main__":
    main()
