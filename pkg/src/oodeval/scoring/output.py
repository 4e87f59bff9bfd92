"""Scoring functions that read only logits/softmax; applicable to every architecture.

All scores in this package share one orientation: larger value means more
in-distribution. Scores whose native form is OOD-oriented are negated here so
a single threshold rule covers every method.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import InputError, ParameterError

DEFAULT_TEMPERATURE = 1.0
DEFAULT_GEN_LAMBDA = 0.5


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise InputError("logits must be a non-empty 1-d vector")
    if not np.all(np.isfinite(logits)):
        raise InputError("logits must be finite")
    return logits


def msp_score(logits: np.ndarray) -> float:
    """Maximum softmax probability, computed with max-subtraction; in (0, 1]."""
    logits = _check_logits(logits)
    shifted = logits - logits.max()
    return float(1.0 / np.exp(shifted).sum())


def energy_score(logits: np.ndarray, T: float = DEFAULT_TEMPERATURE) -> float:
    """Negative energy T*log(sum exp(c_j/T)): the ID-ness orientation of the energy score."""
    logits = _check_logits(logits)
    if not T > 0:
        raise ParameterError(f"temperature must be positive, got {T}")
    return float(T * logsumexp(logits / T))


def gen_score(softmax_probs: np.ndarray, lam: float = DEFAULT_GEN_LAMBDA) -> float:
    """Negated generalized entropy -sum((p(1-p))^lambda); 0 for one-hot, minimal when uniform."""
    p = np.asarray(softmax_probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InputError("softmax vector must be a non-empty 1-d vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError("softmax entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InputError(f"softmax entries must sum to 1, got {p.sum()}")
    if not 0.0 < lam < 1.0:
        raise ParameterError(f"lambda must lie in (0, 1), got {lam}")
    return float(-np.sum((p * (1.0 - p)) ** lam))


def softmax_from_logits(logits: np.ndarray) -> np.ndarray:
    logits = _check_logits(logits)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()
