"""Benchmark curation: semantic-overlap removal, near/far assignment, and
embedding cosine-similarity statistics between the ID set and each candidate
split. Manual review decisions enter as an override file applied last, so
published manifests stay reproducible from data alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ParameterError
from .records import (
    CategoryTable,
    EmbeddingRecord,
    GroundTruthObject,
    ManifestEntry,
    SplitManifest,
)

PAIRING_NEAREST_ID = "nearest_id"
PAIRING_SAMPLED = "all_pairs_sampled"

HISTOGRAM_BINS = 50


@dataclass
class SimilarityStats:
    pair_label: str
    similarities: np.ndarray
    mean: float
    histogram: np.ndarray  # fixed 50-bin counts over [-1, 1]


def _unit_rows(records: Sequence[EmbeddingRecord], side: str) -> np.ndarray:
    if not records:
        raise InputError(f"{side} embedding set is empty")
    rows = np.stack([np.asarray(r.embedding, dtype=np.float64) for r in records])
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise InputError(f"zero-norm embedding on the {side} side")
    return rows / norms[:, None]


def cosine_similarity_stats(
    id_embeddings: Sequence[EmbeddingRecord],
    ood_embeddings: Sequence[EmbeddingRecord],
    pairing: str = PAIRING_NEAREST_ID,
    pair_label: str = "",
    seed: int = 0,
    sample_size: int = 10000,
) -> SimilarityStats:
    """Similarity of each OOD image to the ID set (nearest-ID max by default),
    or over seeded random ID/OOD pairs."""
    id_rows = _unit_rows(id_embeddings, "id")
    ood_rows = _unit_rows(ood_embeddings, "ood")
    if id_rows.shape[1] != ood_rows.shape[1]:
        raise InputError(
            f"embedding dimensions differ: {id_rows.shape[1]} vs {ood_rows.shape[1]}"
        )

    if pairing == PAIRING_NEAREST_ID:
        sims = np.array([float(np.max(id_rows @ q)) for q in ood_rows])
    elif pairing == PAIRING_SAMPLED:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, id_rows.shape[0], size=sample_size)
        jj = rng.integers(0, ood_rows.shape[0], size=sample_size)
        sims = np.sum(id_rows[ii] * ood_rows[jj], axis=1)
    else:
        raise ParameterError(f"unknown pairing {pairing!r}")

    hist, _ = np.histogram(sims, bins=HISTOGRAM_BINS, range=(-1.0, 1.0))
    return SimilarityStats(
        pair_label=pair_label,
        similarities=sims,
        mean=float(np.mean(sims)),
        histogram=hist,
    )


def _group_gt(gt: Sequence[GroundTruthObject]) -> dict[str, list[GroundTruthObject]]:
    by_image: dict[str, list[GroundTruthObject]] = {}
    for g in gt:
        by_image.setdefault(g.image_id, []).append(g)
    return by_image


def _check_category_set(ids: set[int], categories: CategoryTable | None, what: str) -> None:
    if categories is None:
        return
    unknown = ids - categories.ids()
    if unknown:
        raise ConfigurationError(f"{what} references unknown category ids: {sorted(unknown)}")


def filter_overlap(
    gt: Sequence[GroundTruthObject],
    overlap_category_ids: set[int],
    categories: CategoryTable | None = None,
) -> SplitManifest:
    """Mark every image holding a labeled overlap-category object as removed,
    with the offending categories as evidence."""
    _check_category_set(set(overlap_category_ids), categories, "overlap set")
    entries = []
    for image_id in sorted(_group_gt(gt)):
        objs = _group_gt(gt)[image_id]
        tainted = sorted({g.category_id for g in objs if g.category_id in overlap_category_ids})
        if tainted:
            entries.append(ManifestEntry(image_id, "removed", tuple(tainted)))
    return SplitManifest(entries)


def assign_split(
    gt: Sequence[GroundTruthObject],
    near_category_ids: set[int],
    categories: CategoryTable | None = None,
    far_label: str = "far",
    overrides: dict[str, str] | None = None,
) -> SplitManifest:
    """Assign each surviving image to near (holds a near-category object) or far.

    Call after overlap removal. Overrides encode the manual verification
    stage and are applied last.
    """
    _check_category_set(set(near_category_ids), categories, "near set")
    grouped = _group_gt(gt)
    entries = []
    for image_id in sorted(grouped):
        triggers = sorted(
            {g.category_id for g in grouped[image_id] if g.category_id in near_category_ids}
        )
        if triggers:
            entries.append(ManifestEntry(image_id, "near", tuple(triggers)))
        else:
            entries.append(ManifestEntry(image_id, far_label, ()))
    manifest = SplitManifest(entries)
    if overrides:
        manifest = apply_overrides(manifest, overrides)
    return manifest


def apply_overrides(manifest: SplitManifest, overrides: dict[str, str]) -> SplitManifest:
    entries = []
    for e in manifest.entries:
        if e.image_id in overrides:
            entries.append(ManifestEntry(e.image_id, overrides[e.image_id], e.evidence))
        else:
            entries.append(e)
    return SplitManifest(entries)


def remove_then_assign(
    gt: Sequence[GroundTruthObject],
    overlap_category_ids: set[int],
    near_category_ids: set[int],
    categories: CategoryTable | None = None,
    far_label: str = "far",
    overrides: dict[str, str] | None = None,
) -> SplitManifest:
    """Full automatic curation: overlap removal, near/far assignment, overrides."""
    removed = filter_overlap(gt, overlap_category_ids, categories)
    removed_ids = {e.image_id for e in removed.entries}
    survivors = [g for g in gt if g.image_id not in removed_ids]
    assigned = assign_split(survivors, near_category_ids, categories, far_label)
    entries = sorted(
        list(removed.entries) + list(assigned.entries), key=lambda e: e.image_id
    )
    manifest = SplitManifest(entries)
    if overrides:
        manifest = apply_overrides(manifest, overrides)
    manifest.validate()
    return manifest
