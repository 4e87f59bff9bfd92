"""Feature-space scoring: class-conditional Gaussians (Mahalanobis, DDU) and kNN.

Fitting uses the detector's predicted classes on ID training records. All
reductions run over a canonical (lexicographically sorted) row order so that
fits are bit-identical under any permutation of the training records.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ..errors import FitError, InputError, NumericalError, ParameterError, ValidationError

DEFAULT_KNN_K = 10
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianBankState:
    """Per-class means with one shared covariance, stored as a Cholesky factor."""

    class_means: np.ndarray  # (|C|, d); NaN rows for classes with no training objects
    cov_factor: np.ndarray  # (d, d) lower-triangular factor of Sigma + reg*I
    class_priors: np.ndarray  # (|C|,)
    reg_epsilon: float
    fitted: np.ndarray  # (|C|,) bool

    @property
    def dim(self) -> int:
        return self.cov_factor.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]


@dataclass
class KnnBankState:
    normalized_train: np.ndarray  # (N, d), unit-norm rows
    k: int


def _canonical_order(rows: np.ndarray) -> np.ndarray:
    """Sort rows lexicographically (first column major) for order-invariant reductions."""
    return rows[np.lexsort(rows.T[::-1])]


def _extract_features(records: Sequence) -> tuple[np.ndarray, np.ndarray]:
    feats = []
    labels = []
    for r in records:
        if r.features is None:
            raise FitError(
                f"record without features (image_id={r.image_id} det_index={r.det_index})"
            )
        feats.append(np.asarray(r.features, dtype=np.float64))
        labels.append(r.pred_class)
    if not feats:
        raise FitError("empty training set")
    dims = {f.shape[0] for f in feats}
    if len(dims) != 1:
        raise FitError(f"inconsistent feature dimensions: {sorted(dims)}")
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


def fit_gaussian_vectors(
    vectors: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    reg_epsilon: float | None = None,
) -> GaussianBankState:
    """Fit class means and the pooled (divide-by-N) covariance over labeled vectors."""
    n, d = vectors.shape
    if n == 0:
        raise FitError("empty training set")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise FitError("labels outside [0, num_classes)")

    means = np.full((num_classes, d), np.nan)
    fitted = np.zeros(num_classes, dtype=bool)
    priors = np.zeros(num_classes)
    centered_blocks = []
    for c in range(num_classes):
        block = vectors[labels == c]
        if block.shape[0] == 0:
            continue
        block = _canonical_order(block)
        means[c] = np.add.reduce(block, axis=0) / block.shape[0]
        fitted[c] = True
        priors[c] = block.shape[0] / n
        centered_blocks.append(block - means[c])

    centered = np.concatenate(centered_blocks, axis=0)
    sigma = (centered.T @ centered) / n

    if reg_epsilon is None:
        reg_epsilon = 1e-6 * float(np.trace(sigma)) / d
    if reg_epsilon < 0:
        raise ParameterError(f"reg_epsilon must be >= 0, got {reg_epsilon}")

    try:
        factor = np.linalg.cholesky(sigma + reg_epsilon * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"covariance not positive definite at reg_epsilon={reg_epsilon}; "
            "increase reg_epsilon"
        ) from exc
    return GaussianBankState(means, factor, priors, float(reg_epsilon), fitted)


def fit_gaussian_bank(
    records: Sequence,
    num_classes: int,
    reg_epsilon: float | None = None,
) -> GaussianBankState:
    vectors, labels = _extract_features(records)
    return fit_gaussian_vectors(vectors, labels, num_classes, reg_epsilon)


def _check_query(state: GaussianBankState, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (state.dim,):
        raise InputError(f"feature dimension {z.shape} != state dimension ({state.dim},)")
    return z


def _sq_mahalanobis(state: GaussianBankState, z: np.ndarray) -> np.ndarray:
    """Squared distances to every fitted class mean, via triangular solves."""
    diffs = z[None, :] - state.class_means[state.fitted]
    ys = solve_triangular(state.cov_factor, diffs.T, lower=True)
    return np.sum(ys * ys, axis=0)


def mahalanobis_score(state: GaussianBankState, z: np.ndarray) -> float:
    """max_c of the negated squared Mahalanobis distance to class c; always <= 0."""
    z = _check_query(state, z)
    if not np.any(state.fitted):
        raise InputError("state has no fitted classes")
    return float(np.max(-_sq_mahalanobis(state, z)))


def ddu_score(state: GaussianBankState, z: np.ndarray) -> float:
    """Log density under the mixture of class Gaussians with frequency weights."""
    z = _check_query(state, z)
    if not np.any(state.fitted):
        raise InputError("state has no fitted classes")
    d = state.dim
    log_det = 2.0 * float(np.sum(np.log(np.diag(state.cov_factor))))
    log_norm = -0.5 * (d * _LOG_2PI + log_det)
    log_comp = log_norm - 0.5 * _sq_mahalanobis(state, z)
    priors = state.class_priors[state.fitted]
    with np.errstate(divide="ignore"):  # zero priors drop out as -inf
        log_pi = np.log(priors)
    return float(logsumexp(log_pi + log_comp))


def fit_knn_bank(records: Sequence, k: int = DEFAULT_KNN_K) -> KnnBankState:
    vectors, _ = _extract_features(records)
    if k < 1 or k > vectors.shape[0]:
        raise ParameterError(f"k must be in [1, {vectors.shape[0]}], got {k}")
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("zero-norm feature in training set")
    return KnnBankState(vectors / norms[:, None], int(k))


def knn_score(state: KnnBankState, z: np.ndarray) -> float:
    """Negated distance to the k-th nearest stored row in normalized space."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (state.normalized_train.shape[1],):
        raise InputError(
            f"feature dimension {z.shape} != bank dimension ({state.normalized_train.shape[1]},)"
        )
    norm = float(np.linalg.norm(z))
    if norm == 0.0:
        raise InputError("zero-norm query")
    q = z / norm
    dists = np.sqrt(np.sum((state.normalized_train - q) ** 2, axis=1))
    kth = np.partition(dists, state.k - 1)[state.k - 1]
    return float(-kth)


def gaussian_log_density_single(state: GaussianBankState, z: np.ndarray, class_index: int) -> float:
    """Log N(z; mu_c, Sigma_reg) for one class; used by tests and diagnostics."""
    z = _check_query(state, z)
    if not state.fitted[class_index]:
        warnings.warn(f"class {class_index} has no training objects", RuntimeWarning)
        return float("-inf")
    diff = z - state.class_means[class_index]
    y = solve_triangular(state.cov_factor, diff, lower=True)
    log_det = 2.0 * float(np.sum(np.log(np.diag(state.cov_factor))))
    return float(-0.5 * (state.dim * _LOG_2PI + log_det + y @ y))
