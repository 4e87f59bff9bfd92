"""Scores combining penultimate features with the final linear head:
residual-subspace virtual logits, activation pruning/clipping, and weight
sparsification, all reduced to an energy readout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InputError, ParameterError
from ..tensorio import HeadWeights
from .feature import _canonical_order, _extract_features
from .output import energy_score

METHOD_ASH = "ash"
METHOD_REACT = "react"
METHOD_DICE = "dice"
METHOD_DICE_REACT = "dice_react"
_CLIP_METHODS = (METHOD_ASH, METHOD_REACT, METHOD_DICE, METHOD_DICE_REACT)

DEFAULT_PERCENTILE = 90.0
DEFAULT_KEEP_FRACTION = 0.3
DEFAULT_ALPHA_SAMPLE_CAP = 10000


class DegenerateInputWarning(UserWarning):
    """A score was forced onto its documented degenerate fallback."""


@dataclass
class VimState:
    offset: np.ndarray  # (d,) additive centering, sign already applied
    residual_basis: np.ndarray  # (d, d-D) orthonormal columns
    alpha: float
    D: int

    @property
    def dim(self) -> int:
        return self.offset.shape[0]


@dataclass
class ActivationClipState:
    method: str
    global_threshold: float  # train percentile of pooled feature entries
    percentile: float
    sparsified_W: np.ndarray | None  # (|C|, d); present iff method involves DICE
    keep_fraction: float


def default_vim_dim(d: int) -> int:
    base = 1000 if d > 1000 else 512
    return min(base, d - 1)


def _residual_norm(basis: np.ndarray, x: np.ndarray) -> float:
    if basis.shape[1] == 0:
        return 0.0
    proj = basis @ (basis.T @ x)
    return float(np.linalg.norm(proj))


def fit_vim(
    records: Sequence,
    head: HeadWeights,
    D: int | None = None,
    seed: int = 0,
    sample_cap: int = DEFAULT_ALPHA_SAMPLE_CAP,
    center_sign: int = 1,
) -> VimState:
    """Residual eigenbasis of the centered train features plus the virtual-logit scale alpha."""
    feats, _ = _extract_features(records)
    n, d = feats.shape
    if d < 2:
        raise ParameterError(f"feature dimension must be >= 2, got {d}")
    if head.feature_dim != d:
        raise InputError(f"head dimension {head.feature_dim} != feature dimension {d}")
    if center_sign not in (1, -1):
        raise ParameterError("center_sign must be +1 or -1")

    if D is None:
        D = default_vim_dim(d)
    if not 0 < D < d:
        raise ParameterError(f"D must lie in (0, d); got D={D}, d={d}")

    offset = center_sign * (-np.linalg.pinv(head.W) @ head.b)
    x = feats + offset

    gram = x.T @ x
    eigvals, eigvecs = np.linalg.eigh(gram)  # ascending
    order = np.argsort(eigvals)[::-1]  # descending eigenvalues
    basis = eigvecs[:, order[D:]]  # trailing d-D eigenvectors span the residual subspace

    rng = np.random.default_rng(seed)
    k = min(n, sample_cap)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    max_logits = np.array([float(np.max(records[i].logits)) for i in idx])
    residual_norms = np.array([_residual_norm(basis, x[i]) for i in idx])
    denom = float(np.add.reduce(residual_norms))
    if denom == 0.0:
        warnings.warn(
            "all residual norms are zero; alpha set to 1", DegenerateInputWarning
        )
        alpha = 1.0
    else:
        alpha = float(np.add.reduce(max_logits)) / denom
    return VimState(offset=offset, residual_basis=basis, alpha=alpha, D=int(D))


def vim_score(state: VimState, z: np.ndarray, logits: np.ndarray) -> float:
    """Negated (virtual logit - energy): ID-ness orientation of the residual score."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (state.dim,):
        raise InputError(f"feature dimension {z.shape} != state dimension ({state.dim},)")
    res = _residual_norm(state.residual_basis, z + state.offset)
    return float(-(state.alpha * res - energy_score(np.asarray(logits, dtype=np.float64))))


def _top_k_per_row(W: np.ndarray, v: np.ndarray, keep: int) -> np.ndarray:
    """Keep the `keep` largest-v entries per row of W; ties to the lower column index."""
    n_classes, d = W.shape
    out = np.zeros_like(W)
    cols = np.arange(d)
    for c in range(n_classes):
        order = np.lexsort((cols, -v[c]))
        sel = order[:keep]
        out[c, sel] = W[c, sel]
    return out


def fit_activation_state(
    records: Sequence,
    head: HeadWeights,
    method: str,
    percentile: float = DEFAULT_PERCENTILE,
    keep_fraction: float = DEFAULT_KEEP_FRACTION,
) -> ActivationClipState:
    """Pooled train-percentile threshold, plus the sparsified head for DICE variants."""
    if method not in _CLIP_METHODS:
        raise ParameterError(f"unknown clipping method {method!r}")
    if not 0.0 <= percentile <= 100.0:
        raise ParameterError(f"percentile must lie in [0, 100], got {percentile}")
    if not 0.0 < keep_fraction <= 1.0:
        raise ParameterError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    feats, _ = _extract_features(records)
    if head.feature_dim != feats.shape[1]:
        raise InputError(
            f"head dimension {head.feature_dim} != feature dimension {feats.shape[1]}"
        )

    pooled = np.sort(feats, axis=None)  # percentile over every entry of the train set
    threshold = float(np.percentile(pooled, percentile))

    sparsified = None
    if method in (METHOD_DICE, METHOD_DICE_REACT):
        d = feats.shape[1]
        mean_feat = np.add.reduce(_canonical_order(feats), axis=0) / feats.shape[0]
        v = head.W * mean_feat[None, :]  # v_c = w_c elementwise the mean train feature
        keep = int(np.floor(keep_fraction * d + 1e-9))
        keep = max(keep, 1)
        sparsified = _top_k_per_row(head.W, v, keep)

    return ActivationClipState(
        method=method,
        global_threshold=threshold,
        percentile=float(percentile),
        sparsified_W=sparsified,
        keep_fraction=float(keep_fraction),
    )


def clipped_energy_score(state: ActivationClipState, head: HeadWeights, z: np.ndarray) -> float:
    """Energy of the head output after the method's activation/weight surgery."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.feature_dim,):
        raise InputError(f"feature dimension {z.shape} != head dimension ({head.feature_dim},)")
    t = state.global_threshold

    if state.method == METHOD_REACT:
        logits = head.W @ np.minimum(z, t) + head.b
    elif state.method == METHOD_ASH:
        pruned = np.where(z >= t, z, 0.0)
        s1 = float(np.add.reduce(z))
        s2 = float(np.add.reduce(pruned))
        if s2 == 0.0:
            warnings.warn("all activations pruned; falling back to bias energy",
                          DegenerateInputWarning)
            return energy_score(head.b)
        logits = head.W @ (pruned * np.exp(s1 / s2)) + head.b
    elif state.method == METHOD_DICE:
        logits = state.sparsified_W @ z + head.b
    elif state.method == METHOD_DICE_REACT:
        logits = state.sparsified_W @ np.minimum(z, t) + head.b
    else:
        raise ParameterError(f"unknown clipping method {state.method!r}")
    return energy_score(logits)
