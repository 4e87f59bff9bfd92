"""Shared builders for synthetic records, scenes, and fixture files."""

from __future__ import annotations

import numpy as np

from oodeval.calibration import FlaggedDetection, VERDICT_ID, VERDICT_OOD, UNKNOWN_CLASS
from oodeval.records import (
    CategoryEntry,
    CategoryTable,
    DetectionRecord,
    GroundTruthObject,
)


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def mk_det(
    image_id: str,
    det_index: int,
    logits,
    bbox=(0.0, 0.0, 10.0, 10.0),
    features=None,
    latent_pooled=None,
) -> DetectionRecord:
    logits = np.asarray(logits, dtype=np.float64)
    return DetectionRecord(
        image_id=image_id,
        det_index=det_index,
        bbox=np.asarray(bbox, dtype=np.float64),
        pred_class=int(np.argmax(logits)),
        confidence=float(softmax(logits).max()),
        logits=logits,
        features=None if features is None else np.asarray(features, dtype=np.float64),
        latent_pooled=None if latent_pooled is None else np.asarray(latent_pooled, dtype=np.float64),
    )


def mk_gt(image_id: str, bbox, category_id=0, is_unknown=True, origin="synthetic") -> GroundTruthObject:
    return GroundTruthObject(
        image_id=image_id,
        bbox=np.asarray(bbox, dtype=np.float64),
        category_id=category_id,
        is_unknown=is_unknown,
        dataset_origin=origin,
    )


def mk_flagged(det: DetectionRecord, idness: float, flagged: bool) -> FlaggedDetection:
    return FlaggedDetection(
        record=det,
        idness=idness,
        verdict=VERDICT_OOD if flagged else VERDICT_ID,
        effective_class=UNKNOWN_CLASS if flagged else det.pred_class,
    )


def id_table(num_classes: int, extra=()) -> CategoryTable:
    entries = [CategoryEntry(i, f"class_{i}", "id") for i in range(num_classes)]
    entries += [CategoryEntry(cid, name, role) for cid, name, role in extra]
    return CategoryTable(tuple(entries))


def random_records(
    rng: np.random.Generator,
    n: int,
    num_classes: int,
    dim: int,
    image_prefix: str = "img",
    logit_scale: float = 3.0,
) -> list[DetectionRecord]:
    records = []
    for i in range(n):
        logits = rng.normal(0.0, logit_scale, size=num_classes)
        features = rng.normal(0.0, 1.0, size=dim)
        x1, y1 = rng.uniform(0, 50, size=2)
        w, h = rng.uniform(1, 30, size=2)
        records.append(
            mk_det(
                f"{image_prefix}{i % max(1, n // 3):03d}",
                i,
                logits,
                bbox=(x1, y1, x1 + w, y1 + h),
                features=features,
            )
        )
    return records
