"""Population-level ID-vs-OOD separation metrics (ID is the positive class).

AUROC uses the rank-statistic form with midrank ties, which is exactly the
pair-counting definition; no curve integration, so ties cost exactly half
credit and results are reproducible to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..calibration import calibrate_tau
from ..errors import InputError


@dataclass(frozen=True)
class BinaryMetricResult:
    auroc: float
    fpr_at_tpr: float
    tpr_target: float
    n_id: int
    n_ood: int


def auroc(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InputError("both score populations must be non-empty")
    ranks = rankdata(np.concatenate([a, b]), method="average")
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def fpr_at_tpr(
    id_scores: Sequence[float], ood_scores: Sequence[float], tpr_target: float = 0.95
) -> float:
    """Fraction of OOD scores at or above the tau retaining tpr_target of ID scores."""
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InputError("both score populations must be non-empty")
    tau = calibrate_tau(a, tpr_target).tau
    return float(np.count_nonzero(b >= tau)) / b.size


def binary_metrics(
    id_scores: Sequence[float], ood_scores: Sequence[float], tpr_target: float = 0.95
) -> BinaryMetricResult:
    return BinaryMetricResult(
        auroc=auroc(id_scores, ood_scores),
        fpr_at_tpr=fpr_at_tpr(id_scores, ood_scores, tpr_target),
        tpr_target=tpr_target,
        n_id=len(id_scores),
        n_ood=len(ood_scores),
    )
