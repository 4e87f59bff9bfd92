"""AUROC and FPR-at-TPR: frozen examples, exact pair-counting parity, duality."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from oodeval.calibration import calibrate_tau, required_id_count
from oodeval.errors import InputError
from oodeval.metrics.binary import auroc, binary_metrics, fpr_at_tpr

populations = st.lists(
    st.integers(-20, 20).map(float), min_size=1, max_size=80
)  # integer-valued floats force plenty of ties


def test_auroc_frozen():
    assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert auroc([0.0, 1.0], [2.0, 3.0]) == 0.0
    assert auroc([1.0, 2.0], [1.0, 2.0]) == 0.5
    assert oracles.auroc_pairs_oracle([1.0, 2.0], [1.0, 2.0]) == 0.5


def test_auroc_empty():
    with pytest.raises(InputError):
        auroc([], [1.0])
    with pytest.raises(InputError):
        fpr_at_tpr([1.0], [], 0.95)


def test_fpr_frozen():
    id_scores = list(np.arange(100.0))
    assert fpr_at_tpr(id_scores, [-1.0, -2.0], 0.95) == 0.0
    assert fpr_at_tpr(id_scores, [1000.0, 2000.0], 0.95) == 1.0
    assert fpr_at_tpr(id_scores, id_scores, 0.95) == 0.95


@settings(max_examples=100, deadline=None)
@given(populations, populations)
def test_auroc_equals_pair_counting_exactly(a, b):
    assert auroc(a, b) == oracles.auroc_pairs_oracle(a, b)


@settings(max_examples=100, deadline=None)
@given(populations, populations)
def test_auroc_complement_exact(a, b):
    assert auroc(a, b) + auroc(b, a) == 1.0


@settings(max_examples=50, deadline=None)
@given(populations, populations)
def test_auroc_monotone_transform_invariance(a, b):
    f = lambda x: np.exp(0.1 * np.asarray(x)) + 3.0 * np.asarray(x)  # strictly increasing
    assert auroc(a, b) == auroc(list(f(a)), list(f(b)))


@settings(max_examples=80, deadline=None)
@given(populations, populations, st.floats(0.1, 0.95))
def test_fpr_tau_duality(a, b, target):
    tau = calibrate_tau(a, target).tau
    direct = sum(1 for s in b if s >= tau) / len(b)
    assert fpr_at_tpr(a, b, target) == direct
    # oracle path: exhaustive sweep over candidate thresholds
    assert direct == oracles.fpr_sweep_oracle(a, b, required_id_count(len(a), target))
    assert sum(1 for s in a if s >= tau) / len(a) >= target - 1e-12


@settings(max_examples=50, deadline=None)
@given(populations, populations, st.floats(0.2, 0.5), st.floats(0.5, 0.9))
def test_fpr_monotone_in_target(a, b, low, high):
    assert fpr_at_tpr(a, b, low) <= fpr_at_tpr(a, b, high)


def test_binary_metrics_bundle():
    result = binary_metrics([1.0, 2.0, 3.0], [0.0, 1.5], 0.6)
    assert result.n_id == 3 and result.n_ood == 2
    assert 0.0 <= result.auroc <= 1.0
    assert result.tpr_target == 0.6
