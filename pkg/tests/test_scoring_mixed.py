"""Mixed output/feature scoring: ViM geometry, activation surgery, reduction identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import mk_det
from oodeval.errors import ParameterError
from oodeval.scoring.mixed import (
    ActivationClipState,
    DegenerateInputWarning,
    VimState,
    clipped_energy_score,
    default_vim_dim,
    fit_activation_state,
    fit_vim,
    vim_score,
)
from oodeval.scoring.output import energy_score
from oodeval.tensorio import HeadWeights


def recs_with(features, logits_list=None):
    out = []
    for i, f in enumerate(features):
        logits = logits_list[i] if logits_list is not None else np.array([1.0, 0.0])
        out.append(mk_det(f"im{i:03d}", i, logits, features=f))
    return out


def head_for(d, n_classes=2, seed=0, nonneg=False):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n_classes, d))
    if nonneg:
        W = np.abs(W)
    return HeadWeights(W, rng.normal(size=n_classes))


def test_zero_bias_gives_zero_offset():
    recs = recs_with(np.random.default_rng(0).normal(size=(10, 3)))
    head = HeadWeights(np.random.default_rng(1).normal(size=(2, 3)), np.zeros(2))
    state = fit_vim(recs, head, D=1)
    assert np.array_equal(state.offset, np.zeros(3))


def test_residual_basis_dimension_rule():
    assert default_vim_dim(4) == 3        # 512 capped at d-1
    assert default_vim_dim(600) == 512
    assert default_vim_dim(2048) == 1000


def test_residual_basis_on_anisotropic_data():
    # variance along e1 only: with D=1 the residual must be +-e2
    xs = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]])
    recs = recs_with(xs)
    head = HeadWeights(np.eye(2), np.zeros(2))
    with pytest.warns(DegenerateInputWarning):
        state = fit_vim(recs, head, D=1)
    assert abs(state.residual_basis[1, 0]) == pytest.approx(1.0, abs=1e-12)
    assert abs(state.residual_basis[0, 0]) == pytest.approx(0.0, abs=1e-12)
    # dense eigensolver oracle agrees on the residual eigenvector
    evals, evecs = np.linalg.eigh(xs.T @ xs)
    small = evecs[:, int(np.argmin(evals))]
    assert abs(abs(small @ state.residual_basis[:, 0]) - 1.0) <= 1e-12


def test_vim_parameter_errors():
    recs = recs_with(np.random.default_rng(0).normal(size=(5, 3)))
    head = head_for(3)
    with pytest.raises(ParameterError):
        fit_vim(recs, head, D=3)
    with pytest.raises(ParameterError):
        fit_vim(recs, head, D=5)


def test_isotropic_data_single_residual_direction():
    rng = np.random.default_rng(3)
    recs = recs_with(rng.normal(size=(200, 2)))
    state = fit_vim(recs, head_for(2, seed=4), D=1)
    assert state.residual_basis.shape == (2, 1)
    assert np.linalg.norm(state.residual_basis[:, 0]) == pytest.approx(1.0, abs=1e-12)


def test_vim_score_reductions_and_oracle():
    lg = np.array([0.4, -1.1, 2.0])
    empty = VimState(np.zeros(4), np.zeros((4, 0)), 1.0, 4)
    assert vim_score(empty, np.ones(4), lg) == energy_score(lg)

    # z inside the principal subspace with zero offset also reduces to energy
    rng = np.random.default_rng(5)
    recs = recs_with(rng.normal(size=(50, 3)), [rng.normal(size=2) for _ in range(50)])
    head = HeadWeights(rng.normal(size=(2, 3)), np.zeros(2))
    state = fit_vim(recs, head, D=2)
    principal = np.cross(state.residual_basis[:, 0], rng.normal(size=3))
    assert abs(
        vim_score(state, principal, lg) - energy_score(lg)
    ) <= 1e-8 * max(1.0, abs(energy_score(lg)))

    for _ in range(10):
        z = rng.normal(size=3)
        expected = oracles.vim_oracle(state.offset, state.residual_basis, state.alpha, z, lg)
        assert oracles.rel_err(vim_score(state, z, lg), expected) <= 1e-8


def test_projector_idempotent_and_orthogonal():
    rng = np.random.default_rng(8)
    recs = recs_with(rng.normal(size=(60, 5)))
    state = fit_vim(recs, head_for(5, seed=9), D=2)
    R = state.residual_basis
    P = R @ R.T
    assert np.max(np.abs(P @ P - P)) <= 1e-8
    x = np.stack([r.features for r in recs]) + state.offset
    evals, evecs = np.linalg.eigh(x.T @ x)
    principal = evecs[:, np.argsort(evals)[::-1][:2]]
    for j in range(2):
        assert np.linalg.norm(P @ principal[:, j]) <= 1e-8


def test_alpha_reproducible_across_runs():
    rng = np.random.default_rng(10)
    feats = rng.normal(size=(300, 6))
    logits = [rng.normal(size=3) for _ in range(300)]
    head = HeadWeights(rng.normal(size=(3, 6)), rng.normal(size=3))
    a = fit_vim(recs_with(feats, logits), head, D=3, seed=42)
    b = fit_vim(recs_with(feats, logits), head, D=3, seed=42)
    assert a.alpha == b.alpha
    assert np.array_equal(a.residual_basis, b.residual_basis)


def test_alpha_degenerate_warns_and_sets_one():
    xs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.5, 0.0], [-0.5, 0.0]])
    head = HeadWeights(np.eye(2), np.zeros(2))
    with pytest.warns(DegenerateInputWarning):
        state = fit_vim(recs_with(xs), head, D=1)
    assert state.alpha == 1.0


def test_activation_threshold_on_constant_train():
    recs = recs_with(np.full((4, 3), 2.5))
    head = head_for(3)
    for pct in (0.0, 50.0, 90.0, 100.0):
        assert fit_activation_state(recs, head, "react", pct).global_threshold == 2.5


def test_dice_keep_fraction_one_is_identity():
    rng = np.random.default_rng(12)
    recs = recs_with(rng.normal(size=(10, 4)))
    head = head_for(4, seed=13)
    state = fit_activation_state(recs, head, "dice", keep_fraction=1.0)
    assert np.array_equal(state.sparsified_W, head.W)


def test_dice_topk_matches_exhaustive_ranking_oracle():
    W = np.array([[1.0, -2.0, 3.0], [4.0, 5.0, -6.0]])
    feats = np.array([[1.0, 2.0, 0.5], [3.0, 0.0, 1.5]])
    head = HeadWeights(W, np.zeros(2))
    state = fit_activation_state(recs_with(feats), head, "dice", keep_fraction=2 / 3)
    mean_feat = feats.mean(axis=0)
    expected = oracles.dice_topk_oracle(W, mean_feat, keep=2)
    assert np.array_equal(state.sparsified_W, expected)


def test_dice_tie_break_lower_column():
    W = np.array([[1.0, 1.0, 1.0]])
    feats = np.array([[2.0, 2.0, 2.0]])  # all contributions equal
    head = HeadWeights(W, np.zeros(1))
    state = fit_activation_state(recs_with(feats, [np.array([0.0])]), head, "dice",
                                 keep_fraction=1 / 3)
    assert np.array_equal(state.sparsified_W, [[1.0, 0.0, 0.0]])


def test_react_noop_above_max():
    rng = np.random.default_rng(14)
    head = head_for(3, seed=15)
    z = rng.normal(size=3)
    state = ActivationClipState("react", float(np.max(z)) + 1.0, 99.0, None, 1.0)
    assert clipped_energy_score(state, head, z) == energy_score(head.W @ z + head.b)


def test_ash_definition_trace():
    head = HeadWeights(np.eye(2), np.zeros(2))
    state = ActivationClipState("ash", 5.0, 90.0, None, 1.0)
    z = np.array([1.0, 10.0])
    # pruned [0, 10], s1 = 11, s2 = 10, scale exp(1.1)
    expected = energy_score(np.array([0.0, 10.0 * np.exp(1.1)]))
    assert clipped_energy_score(state, head, z) == expected
    assert oracles.rel_err(expected, oracles.ash_oracle(np.eye(2), np.zeros(2), 5.0, z)) <= 1e-12


def test_ash_all_pruned_falls_back_to_bias():
    head = head_for(2, seed=16)
    state = ActivationClipState("ash", 100.0, 99.0, None, 1.0)
    with pytest.warns(DegenerateInputWarning):
        value = clipped_energy_score(state, head, np.array([1.0, 2.0]))
    assert value == energy_score(head.b)


def test_reduction_identities_bitwise():
    rng = np.random.default_rng(17)
    feats = rng.normal(size=(40, 5))
    head = head_for(5, seed=18)
    recs = recs_with(feats)
    dice = fit_activation_state(recs, head, "dice", keep_fraction=1.0)
    react = fit_activation_state(recs, head, "react", percentile=100.0)
    for i in range(40):
        z = feats[i]  # inputs drawn from the train set keep percentile-100 clipping inert
        plain = energy_score(head.W @ z + head.b)
        assert clipped_energy_score(dice, head, z) == plain
        assert clipped_energy_score(react, head, z) == plain


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_react_monotone_in_threshold_for_nonneg_heads(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    head = head_for(d, seed=seed, nonneg=True)
    z = rng.normal(size=d)
    thresholds = np.sort(rng.normal(size=5))
    values = [
        clipped_energy_score(ActivationClipState("react", float(t), 0.0, None, 1.0), head, z)
        for t in thresholds
    ]
    unclipped = energy_score(head.W @ z + head.b)
    for a, b in zip(values, values[1:]):
        assert a <= b + 1e-12
    assert all(v <= unclipped + 1e-12 for v in values)


def test_clip_oracles_agree():
    rng = np.random.default_rng(19)
    head = head_for(4, seed=20)
    recs = recs_with(rng.normal(size=(30, 4)))
    z = rng.normal(size=4)
    react = fit_activation_state(recs, head, "react", percentile=60.0)
    assert oracles.rel_err(
        clipped_energy_score(react, head, z),
        oracles.react_oracle(head.W, head.b, react.global_threshold, z),
    ) <= 1e-12
    dice_react = fit_activation_state(recs, head, "dice_react", percentile=60.0,
                                      keep_fraction=0.5)
    assert oracles.rel_err(
        clipped_energy_score(dice_react, head, z),
        oracles.dice_react_oracle(
            dice_react.sparsified_W, head.b, dice_react.global_threshold, z
        ),
    ) <= 1e-12
