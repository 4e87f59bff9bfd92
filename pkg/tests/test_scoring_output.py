"""Output-based scores: frozen values, stability, invariance properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from oodeval.errors import InputError, ParameterError
from oodeval.scoring.output import energy_score, gen_score, msp_score, softmax_from_logits

finite_logits = st.lists(
    st.floats(-30, 30, allow_nan=False, allow_infinity=False), min_size=1, max_size=8
)


def test_msp_examples():
    assert msp_score(np.zeros(4)) == 0.25
    assert msp_score(np.array([0.0, np.log(3.0)])) == pytest.approx(0.75, abs=1e-12)
    assert msp_score(np.array([1000.0, 0.0])) == pytest.approx(1.0, abs=1e-12)


def test_energy_examples():
    assert energy_score(np.array([0.0, 0.0])) == pytest.approx(np.log(2.0), abs=1e-12)
    assert energy_score(np.array([2.5])) == 2.5
    # frozen from the high-precision direct-summation oracle
    assert energy_score(np.array([1.0, 2.0, 3.0])) == pytest.approx(3.40760596444438, abs=1e-8)
    assert oracles.energy_oracle([1.0, 2.0, 3.0]) == pytest.approx(3.40760596444438, abs=1e-10)


def test_gen_examples():
    assert gen_score(np.array([1.0, 0.0, 0.0])) == 0.0
    assert gen_score(np.array([0.5, 0.5])) == -1.0
    assert gen_score(np.full(4, 0.25)) == pytest.approx(-np.sqrt(3.0), abs=1e-12)


def test_input_errors():
    with pytest.raises(InputError):
        msp_score(np.array([]))
    with pytest.raises(InputError):
        msp_score(np.array([np.inf, 0.0]))
    with pytest.raises(ParameterError):
        energy_score(np.array([1.0]), T=0.0)
    with pytest.raises(InputError):
        gen_score(np.array([0.7, 0.7]))
    with pytest.raises(InputError):
        gen_score(np.array([1.2, -0.2]))


@settings(max_examples=100, deadline=None)
@given(finite_logits, st.floats(-100, 100, allow_nan=False))
def test_msp_shift_invariance(logits, shift):
    logits = np.asarray(logits)
    assert abs(msp_score(logits + shift) - msp_score(logits)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(finite_logits, st.floats(-100, 100, allow_nan=False))
def test_energy_shift_equivariance(logits, shift):
    # adding a constant moves the energy ID-ness by exactly that constant
    logits = np.asarray(logits)
    assert energy_score(logits + shift) - energy_score(logits) == pytest.approx(
        shift, abs=1e-10
    )


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.randoms())
def test_gen_permutation_invariance(raw, rnd):
    p = np.asarray(raw)
    p = p / p.sum()
    shuffled = list(p)
    rnd.shuffle(shuffled)
    assert gen_score(np.asarray(shuffled)) == pytest.approx(gen_score(p), abs=1e-12)


def test_finite_at_extreme_magnitudes():
    big = np.array([1e6, -1e6, 0.0])
    assert np.isfinite(msp_score(big))
    assert np.isfinite(energy_score(big))
    assert np.isfinite(gen_score(softmax_from_logits(big)))


@settings(max_examples=60, deadline=None)
@given(finite_logits)
def test_against_extended_precision_oracles(logits):
    logits = np.asarray(logits)
    assert oracles.rel_err(msp_score(logits), oracles.msp_oracle(logits)) <= 1e-12
    assert oracles.rel_err(energy_score(logits), oracles.energy_oracle(logits)) <= 1e-12
    p = softmax_from_logits(logits)
    assert oracles.rel_err(gen_score(p), oracles.gen_oracle(p)) <= 1e-12
