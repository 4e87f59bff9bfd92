"""Domain types and line-delimited record I/O.

Every text artifact is UTF-8, one object per line, tab-separated fields,
vectors as comma-joined decimal literals, with a mandatory first line
``#schema:<type>:<version>``. Floats are parsed into float64; writers emit
shortest round-trip decimal (``repr``), so write(load(f)) is byte-identical
for files produced by these writers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import SchemaError, ValidationError

SCHEMA_VERSION = 1

ROLE_ID = "id"
ROLE_NEAR = "ood_near"
ROLE_FAR = "ood_far"
ROLE_OVERLAP = "overlap"
_ROLES = (ROLE_ID, ROLE_NEAR, ROLE_FAR, ROLE_OVERLAP)

ASSIGNMENTS = ("near", "far", "farther", "removed")

# max |confidence - max softmax(logits)| tolerated at load time
_CONFIDENCE_ATOL = 1e-5


@dataclass(frozen=True)
class CategoryEntry:
    category_id: int
    name: str
    role: str


@dataclass(frozen=True)
class CategoryTable:
    """Ordered category list; the `id`-role entries are the model's classes in logit order."""

    entries: tuple[CategoryEntry, ...]

    def __post_init__(self):
        ids = [e.category_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("category_ids must be unique")
        for e in self.entries:
            if e.role not in _ROLES:
                raise ValidationError(f"unknown category role {e.role!r}")

    @property
    def id_class_ids(self) -> tuple[int, ...]:
        return tuple(e.category_id for e in self.entries if e.role == ROLE_ID)

    @property
    def num_classes(self) -> int:
        return len(self.id_class_ids)

    def __contains__(self, category_id: int) -> bool:
        return any(e.category_id == category_id for e in self.entries)

    def ids(self) -> frozenset[int]:
        return frozenset(e.category_id for e in self.entries)


@dataclass
class DetectionRecord:
    """One detected object as exported by a detector adapter."""

    image_id: str
    det_index: int
    bbox: np.ndarray  # (4,) x_min, y_min, x_max, y_max in pixels
    pred_class: int
    confidence: float
    logits: np.ndarray  # (|C|,)
    features: np.ndarray | None = None  # (d,) penultimate activations
    latent_pooled: np.ndarray | None = None  # (N_c,) pre-pooled latent vector

    def validate(self, num_classes: int | None = None) -> None:
        x1, y1, x2, y2 = self.bbox
        if not (x2 > x1 and y2 > y1):
            raise ValidationError(
                f"degenerate bbox for image_id={self.image_id} det_index={self.det_index}: "
                f"({x1}, {y1}, {x2}, {y2})"
            )
        if self.det_index < 0:
            raise ValidationError(
                f"negative det_index for image_id={self.image_id}"
            )
        if num_classes is not None and self.logits.shape[0] != num_classes:
            raise SchemaError(
                f"logits length {self.logits.shape[0]} != |C| = {num_classes} "
                f"(image_id={self.image_id} det_index={self.det_index})"
            )
        if not np.all(np.isfinite(self.logits)):
            raise ValidationError(
                f"non-finite logits (image_id={self.image_id} det_index={self.det_index})"
            )
        if int(np.argmax(self.logits)) != self.pred_class:
            raise ValidationError(
                f"pred_class {self.pred_class} != argmax(logits) "
                f"(image_id={self.image_id} det_index={self.det_index})"
            )
        shifted = self.logits - self.logits.max()
        p_max = 1.0 / np.exp(shifted).sum()
        if abs(self.confidence - p_max) > _CONFIDENCE_ATOL:
            raise ValidationError(
                f"confidence {self.confidence} != max softmax {p_max} "
                f"(image_id={self.image_id} det_index={self.det_index})"
            )


@dataclass
class GroundTruthObject:
    image_id: str
    bbox: np.ndarray  # (4,)
    category_id: int
    is_unknown: bool
    dataset_origin: str

    def validate(self, categories: CategoryTable | None = None) -> None:
        x1, y1, x2, y2 = self.bbox
        if not (x2 > x1 and y2 > y1):
            raise ValidationError(
                f"degenerate bbox for image_id={self.image_id}: ({x1}, {y1}, {x2}, {y2})"
            )
        if categories is not None and self.category_id not in categories:
            raise ValidationError(
                f"unknown category_id {self.category_id} (image_id={self.image_id})"
            )


@dataclass
class EmbeddingRecord:
    image_id: str
    embedding: np.ndarray
    split_tag: str | None = None


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    assignment: str  # near | far | farther | removed
    evidence: tuple[int, ...] = ()


@dataclass
class SplitManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def validate(self) -> None:
        seen = set()
        for e in self.entries:
            if e.image_id in seen:
                raise ValidationError(f"duplicate image_id in manifest: {e.image_id}")
            seen.add(e.image_id)
            if e.assignment not in ASSIGNMENTS:
                raise ValidationError(f"unknown assignment {e.assignment!r}")
            if e.assignment == "removed" and not e.evidence:
                raise ValidationError(
                    f"removed entry without evidence: {e.image_id}"
                )

    def by_assignment(self, assignment: str) -> list[str]:
        return [e.image_id for e in self.entries if e.assignment == assignment]


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    det_index: int
    method: str
    value: float


# ---------------------------------------------------------------------------
# formatting helpers


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _fmt_vector(v: np.ndarray | None) -> str:
    if v is None:
        return ""
    return ",".join(_fmt_float(x) for x in np.asarray(v, dtype=np.float64))


def _parse_float(tok: str, path: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: not a decimal literal: {tok!r}") from None


def _parse_int(tok: str, path: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: not an integer: {tok!r}") from None


def _parse_vector(tok: str, path: str, lineno: int) -> np.ndarray | None:
    if tok == "":
        return None
    return np.array([_parse_float(t, path, lineno) for t in tok.split(",")], dtype=np.float64)


def _parse_bool(tok: str, path: str, lineno: int) -> bool:
    if tok == "1":
        return True
    if tok == "0":
        return False
    raise SchemaError(f"{path}:{lineno}: boolean must be 0 or 1, got {tok!r}")


def _read_lines(path: str, expected_type: str) -> list[tuple[int, str]]:
    """Check the schema header and return (lineno, line) for every record line."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise SchemaError(f"{path}: empty file, missing #schema header")
    header = raw[0]
    expected = f"#schema:{expected_type}:{SCHEMA_VERSION}"
    if header != expected:
        raise SchemaError(f"{path}:1: expected header {expected!r}, got {header!r}")
    return [(i + 2, line) for i, line in enumerate(raw[1:]) if line != ""]


def _split_fields(line: str, n: int, path: str, lineno: int) -> list[str]:
    parts = line.split("\t")
    if len(parts) != n:
        raise SchemaError(f"{path}:{lineno}: expected {n} tab-separated fields, got {len(parts)}")
    return parts


def _group_by_image(records: list) -> list:
    """Stable grouping: images in first-appearance order, file order inside each image."""
    order: dict[str, int] = {}
    for r in records:
        order.setdefault(r.image_id, len(order))
    return sorted(records, key=lambda r: order[r.image_id])


def _write_lines(path: str, schema_type: str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#schema:{schema_type}:{SCHEMA_VERSION}\n")
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# detections


def load_detections(path: str, categories: CategoryTable) -> list[DetectionRecord]:
    """Read one DetectionRecord per line, validated, grouped by image_id."""
    num_classes = categories.num_classes
    records = []
    for lineno, line in _read_lines(path, "detection"):
        f = _split_fields(line, 8, path, lineno)
        bbox = _parse_vector(f[2], path, lineno)
        if bbox is None or bbox.shape != (4,):
            raise SchemaError(f"{path}:{lineno}: bbox must have 4 entries")
        logits = _parse_vector(f[5], path, lineno)
        if logits is None:
            raise SchemaError(f"{path}:{lineno}: logits must be non-empty")
        rec = DetectionRecord(
            image_id=f[0],
            det_index=_parse_int(f[1], path, lineno),
            bbox=bbox,
            pred_class=_parse_int(f[3], path, lineno),
            confidence=_parse_float(f[4], path, lineno),
            logits=logits,
            features=_parse_vector(f[6], path, lineno),
            latent_pooled=_parse_vector(f[7], path, lineno),
        )
        rec.validate(num_classes)
        records.append(rec)
    return _group_by_image(records)


def write_detections(path: str, records: Sequence[DetectionRecord]) -> None:
    _write_lines(
        path,
        "detection",
        (
            "\t".join(
                (
                    r.image_id,
                    str(r.det_index),
                    _fmt_vector(r.bbox),
                    str(r.pred_class),
                    _fmt_float(r.confidence),
                    _fmt_vector(r.logits),
                    _fmt_vector(r.features),
                    _fmt_vector(r.latent_pooled),
                )
            )
            for r in records
        ),
    )


# ---------------------------------------------------------------------------
# ground truth


def load_ground_truth(path: str, categories: CategoryTable | None = None) -> list[GroundTruthObject]:
    objects = []
    for lineno, line in _read_lines(path, "ground_truth"):
        f = _split_fields(line, 5, path, lineno)
        bbox = _parse_vector(f[1], path, lineno)
        if bbox is None or bbox.shape != (4,):
            raise SchemaError(f"{path}:{lineno}: bbox must have 4 entries")
        obj = GroundTruthObject(
            image_id=f[0],
            bbox=bbox,
            category_id=_parse_int(f[2], path, lineno),
            is_unknown=_parse_bool(f[3], path, lineno),
            dataset_origin=f[4],
        )
        obj.validate(categories)
        objects.append(obj)
    return _group_by_image(objects)


def write_ground_truth(path: str, objects: Sequence[GroundTruthObject]) -> None:
    _write_lines(
        path,
        "ground_truth",
        (
            "\t".join(
                (
                    o.image_id,
                    _fmt_vector(o.bbox),
                    str(o.category_id),
                    "1" if o.is_unknown else "0",
                    o.dataset_origin,
                )
            )
            for o in objects
        ),
    )


# ---------------------------------------------------------------------------
# categories


def load_categories(path: str) -> CategoryTable:
    entries = []
    for lineno, line in _read_lines(path, "category_table"):
        f = _split_fields(line, 3, path, lineno)
        entries.append(CategoryEntry(_parse_int(f[0], path, lineno), f[1], f[2]))
    return CategoryTable(tuple(entries))


def write_categories(path: str, table: CategoryTable) -> None:
    _write_lines(
        path,
        "category_table",
        ("\t".join((str(e.category_id), e.name, e.role)) for e in table.entries),
    )


# ---------------------------------------------------------------------------
# embeddings


def load_embeddings(path: str) -> list[EmbeddingRecord]:
    records = []
    dim = None
    for lineno, line in _read_lines(path, "embedding"):
        f = _split_fields(line, 3, path, lineno)
        emb = _parse_vector(f[1], path, lineno)
        if emb is None:
            raise SchemaError(f"{path}:{lineno}: empty embedding")
        if dim is None:
            dim = emb.shape[0]
        elif emb.shape[0] != dim:
            raise ValidationError(
                f"{path}:{lineno}: embedding dimension {emb.shape[0]} != {dim}"
            )
        if not np.all(np.isfinite(emb)):
            raise ValidationError(f"{path}:{lineno}: non-finite embedding")
        if float(np.linalg.norm(emb)) == 0.0:
            raise ValidationError(f"{path}:{lineno}: zero-norm embedding")
        records.append(EmbeddingRecord(f[0], emb, f[2] or None))
    return records


def write_embeddings(path: str, records: Sequence[EmbeddingRecord]) -> None:
    _write_lines(
        path,
        "embedding",
        (
            "\t".join((r.image_id, _fmt_vector(r.embedding), r.split_tag or ""))
            for r in records
        ),
    )


# ---------------------------------------------------------------------------
# split manifests


def load_manifest(path: str) -> SplitManifest:
    entries = []
    for lineno, line in _read_lines(path, "split_manifest"):
        f = _split_fields(line, 3, path, lineno)
        evidence = tuple(_parse_int(t, path, lineno) for t in f[2].split(",") if t != "")
        entries.append(ManifestEntry(f[0], f[1], evidence))
    manifest = SplitManifest(entries)
    manifest.validate()
    return manifest


def write_manifest(path: str, manifest: SplitManifest) -> None:
    manifest.validate()
    _write_lines(
        path,
        "split_manifest",
        (
            "\t".join((e.image_id, e.assignment, ",".join(str(c) for c in e.evidence)))
            for e in manifest.entries
        ),
    )


# ---------------------------------------------------------------------------
# per-detection scores


def load_scores(path: str) -> list[ScoreRecord]:
    records = []
    for lineno, line in _read_lines(path, "scores"):
        f = _split_fields(line, 4, path, lineno)
        records.append(
            ScoreRecord(f[0], _parse_int(f[1], path, lineno), f[2], _parse_float(f[3], path, lineno))
        )
    return records


def write_scores(path: str, records: Sequence[ScoreRecord]) -> None:
    _write_lines(
        path,
        "scores",
        (
            "\t".join((r.image_id, str(r.det_index), r.method, _fmt_float(r.value)))
            for r in records
        ),
    )


# ---------------------------------------------------------------------------
# plain image-id lists (the image universe for coverage statistics)


def load_image_list(path: str) -> list[str]:
    ids = []
    seen = set()
    for lineno, line in _read_lines(path, "image_list"):
        if line in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate image_id {line!r}")
        seen.add(line)
        ids.append(line)
    return ids


def write_image_list(path: str, ids: Sequence[str]) -> None:
    _write_lines(path, "image_list", ids)


# ---------------------------------------------------------------------------
# category-id config lists (overlap / near lists, stratification inputs)


def load_category_list(path: str) -> list[int]:
    return [_parse_int(line, path, lineno) for lineno, line in _read_lines(path, "category_list")]


def write_category_list(path: str, ids: Sequence[int]) -> None:
    _write_lines(path, "category_list", (str(i) for i in ids))


def load_overrides(path: str) -> dict[str, str]:
    """Manual assignment overrides, applied after the automatic stages."""
    overrides = {}
    for lineno, line in _read_lines(path, "override"):
        f = _split_fields(line, 2, path, lineno)
        if f[1] not in ASSIGNMENTS:
            raise ValidationError(f"{path}:{lineno}: unknown assignment {f[1]!r}")
        overrides[f[0]] = f[1]
    return overrides


def write_overrides(path: str, overrides: dict[str, str]) -> None:
    _write_lines(path, "override", (f"{k}\t{v}" for k, v in overrides.items()))
