"""Latent-representation density scoring: ROIAlign crops of a hidden feature
map, channel-mean pooling, and the shared-covariance Gaussian machinery on the
pooled vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import InputError, ParameterError, ValidationError
from ..records import _fmt_vector, _parse_float, _parse_int, _read_lines, _split_fields, _write_lines
from ..tensorio import FeatureMapRecord
from .feature import GaussianBankState, fit_gaussian_vectors, mahalanobis_score

DEFAULT_RESOLUTION = 9
_SAMPLES_PER_AXIS = 2  # 2x2 regular sub-points per bin


class ProvenanceWarning(UserWarning):
    """Exported pre-pooled vectors disagree with vectors recomputed from raw maps."""


@dataclass
class PooledLatent:
    image_id: str
    det_index: int
    vector: np.ndarray  # (N_c,)
    pred_class: int | None = None  # needed only when fitting


def _bilinear(plane_stack: np.ndarray, y: float, x: float) -> np.ndarray:
    """Sample every channel at index coordinates (y, x).

    Values live at integer indices; beyond one pixel outside the map the
    sample is zero, within the border band coordinates clamp to the edge.
    """
    n_c, h, w = plane_stack.shape
    if y < -1.0 or y > h or x < -1.0 or x > w:
        return np.zeros(n_c)
    y = max(y, 0.0)
    x = max(x, 0.0)
    y0 = int(y)
    x0 = int(x)
    if y0 >= h - 1:
        y0 = y1 = h - 1
        y = float(y0)
    else:
        y1 = y0 + 1
    if x0 >= w - 1:
        x0 = x1 = w - 1
        x = float(x0)
    else:
        x1 = x0 + 1
    ly, lx = y - y0, x - x0
    hy, hx = 1.0 - ly, 1.0 - lx
    return (
        hy * hx * plane_stack[:, y0, x0]
        + hy * lx * plane_stack[:, y0, x1]
        + ly * hx * plane_stack[:, y1, x0]
        + ly * lx * plane_stack[:, y1, x1]
    )


def roi_align(
    fmap: FeatureMapRecord, bbox: np.ndarray, R: int = DEFAULT_RESOLUTION
) -> tuple[np.ndarray, bool]:
    """Extract an (N_c, R, R) crop under the box; returns (crop, entirely_outside).

    The box is scaled into feature coordinates, divided into an RxR bin grid,
    and each bin is averaged over its 2x2 regular bilinear sub-samples. Values
    sit at cell centers (half-pixel convention), zero-padded outside the map.
    """
    if R < 1:
        raise ParameterError(f"R must be >= 1, got {R}")
    bbox = np.asarray(bbox, dtype=np.float64)
    x1, y1, x2, y2 = bbox * fmap.spatial_scale
    n_c, h, w = fmap.shape
    if x2 <= 0 or x1 >= w or y2 <= 0 or y1 >= h:
        return np.zeros((n_c, R, R)), True

    bin_w = (x2 - x1) / R
    bin_h = (y2 - y1) / R
    crop = np.empty((n_c, R, R))
    for r in range(R):
        for c in range(R):
            acc = np.zeros(n_c)
            for iy in range(_SAMPLES_PER_AXIS):
                for ix in range(_SAMPLES_PER_AXIS):
                    sy = y1 + (r + (iy + 0.5) / _SAMPLES_PER_AXIS) * bin_h - 0.5
                    sx = x1 + (c + (ix + 0.5) / _SAMPLES_PER_AXIS) * bin_w - 0.5
                    acc += _bilinear(fmap.data, sy, sx)
            crop[:, r, c] = acc / (_SAMPLES_PER_AXIS * _SAMPLES_PER_AXIS)
    return crop, False


def pool_channels(crop: np.ndarray) -> np.ndarray:
    """Per-channel mean over the crop's spatial grid."""
    crop = np.asarray(crop, dtype=np.float64)
    if crop.ndim != 3:
        raise InputError(f"crop must be (N_c, R, R), got shape {crop.shape}")
    if not np.all(np.isfinite(crop)):
        raise InputError("crop must be finite")
    return crop.reshape(crop.shape[0], -1).mean(axis=1)


def fit_lard(
    train_pooled: Sequence[PooledLatent],
    num_classes: int,
    reg_epsilon: float | None = None,
) -> GaussianBankState:
    if not train_pooled:
        raise InputError("empty pooled training set")
    for p in train_pooled:
        if p.pred_class is None:
            raise InputError(
                f"pooled latent without pred_class (image_id={p.image_id} det_index={p.det_index})"
            )
    vectors = np.stack([np.asarray(p.vector, dtype=np.float64) for p in train_pooled])
    labels = np.asarray([p.pred_class for p in train_pooled], dtype=np.int64)
    return fit_gaussian_vectors(vectors, labels, num_classes, reg_epsilon)


def lard_score(state: GaussianBankState, pooled: PooledLatent) -> float:
    return mahalanobis_score(state, np.asarray(pooled.vector, dtype=np.float64))


def pool_detections(
    maps: Iterable[FeatureMapRecord],
    records: Sequence,
    R: int = DEFAULT_RESOLUTION,
) -> list[PooledLatent]:
    """ROIAlign + pooling for every detection whose image has an exported map.

    Records that already carry a pre-pooled vector are recomputed from the raw
    map (raw maps win); a disagreement beyond 1e-4 raises a provenance warning.
    """
    by_image: dict[str, list] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec)

    pooled: list[PooledLatent] = []
    for fmap in maps:
        for rec in by_image.get(fmap.image_id, ()):
            crop, outside = roi_align(fmap, rec.bbox, R)
            if outside:
                warnings.warn(
                    f"box entirely outside the feature map "
                    f"(image_id={rec.image_id} det_index={rec.det_index})",
                    RuntimeWarning,
                )
            vec = pool_channels(crop)
            if rec.latent_pooled is not None:
                exported = np.asarray(rec.latent_pooled, dtype=np.float64)
                if exported.shape != vec.shape or np.max(np.abs(exported - vec)) > 1e-4:
                    warnings.warn(
                        f"pre-pooled vector disagrees with raw-map pooling "
                        f"(image_id={rec.image_id} det_index={rec.det_index})",
                        ProvenanceWarning,
                    )
            pooled.append(PooledLatent(rec.image_id, rec.det_index, vec, rec.pred_class))
    pooled.sort(key=lambda p: (p.image_id, p.det_index))
    return pooled


def pooled_from_records(records: Sequence) -> list[PooledLatent]:
    """Adopt exporter-side pre-pooled vectors when no raw maps are supplied."""
    pooled = []
    for rec in records:
        if rec.latent_pooled is None:
            raise ValidationError(
                f"record without latent_pooled vector "
                f"(image_id={rec.image_id} det_index={rec.det_index})"
            )
        pooled.append(
            PooledLatent(rec.image_id, rec.det_index,
                         np.asarray(rec.latent_pooled, dtype=np.float64), rec.pred_class)
        )
    pooled.sort(key=lambda p: (p.image_id, p.det_index))
    return pooled


def load_pooled(path: str) -> list[PooledLatent]:
    out = []
    for lineno, line in _read_lines(path, "pooled_latent"):
        f = _split_fields(line, 4, path, lineno)
        vec = np.array(
            [_parse_float(t, path, lineno) for t in f[2].split(",")], dtype=np.float64
        )
        pred = f[3]
        out.append(
            PooledLatent(
                f[0],
                _parse_int(f[1], path, lineno),
                vec,
                _parse_int(pred, path, lineno) if pred != "" else None,
            )
        )
    return out


def write_pooled(path: str, pooled: Sequence[PooledLatent]) -> None:
    _write_lines(
        path,
        "pooled_latent",
        (
            "\t".join(
                (
                    p.image_id,
                    str(p.det_index),
                    _fmt_vector(p.vector),
                    "" if p.pred_class is None else str(p.pred_class),
                )
            )
            for p in pooled
        ),
    )
