"""Method registry: twelve per-object scoring functions behind one interface.

Every method returns ID-ness (higher = more in-distribution), so one
threshold rule and one calibration path serve all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, InputError, NumericalError
from ..tensorio import (
    HeadWeights,
    PayloadReader,
    PayloadWriter,
    append_record,
    iter_records,
    open_writer,
)
from . import feature, latent, mixed, output
from .feature import GaussianBankState, KnnBankState
from .latent import PooledLatent
from .mixed import ActivationClipState, VimState

STATE_VERSION = 1

FAMILY_OUTPUT = "output"
FAMILY_FEATURE = "feature"
FAMILY_MIXED = "mixed"
FAMILY_LATENT = "latent"


@dataclass(frozen=True)
class IdnessScore:
    value: float
    method: str
    image_id: str
    det_index: int


@dataclass(frozen=True)
class MethodInfo:
    name: str
    family: str
    needs_fit: bool
    needs_features: bool = False
    needs_head: bool = False
    needs_latent: bool = False


METHODS: dict[str, MethodInfo] = {
    m.name: m
    for m in (
        MethodInfo("msp", FAMILY_OUTPUT, needs_fit=False),
        MethodInfo("energy", FAMILY_OUTPUT, needs_fit=False),
        MethodInfo("gen", FAMILY_OUTPUT, needs_fit=False),
        MethodInfo("knn", FAMILY_FEATURE, needs_fit=True, needs_features=True),
        MethodInfo("mahalanobis", FAMILY_FEATURE, needs_fit=True, needs_features=True),
        MethodInfo("ddu", FAMILY_FEATURE, needs_fit=True, needs_features=True),
        MethodInfo("vim", FAMILY_MIXED, needs_fit=True, needs_features=True, needs_head=True),
        MethodInfo("ash", FAMILY_MIXED, needs_fit=True, needs_features=True, needs_head=True),
        MethodInfo("dice", FAMILY_MIXED, needs_fit=True, needs_features=True, needs_head=True),
        MethodInfo("react", FAMILY_MIXED, needs_fit=True, needs_features=True, needs_head=True),
        MethodInfo("dice_react", FAMILY_MIXED, needs_fit=True, needs_features=True, needs_head=True),
        MethodInfo("lard", FAMILY_LATENT, needs_fit=True, needs_latent=True),
    )
}


@dataclass
class ScoringConfig:
    """Hyperparameters for every method; defaults are the documented ones."""

    energy_temperature: float = output.DEFAULT_TEMPERATURE
    gen_lambda: float = output.DEFAULT_GEN_LAMBDA
    knn_k: int = feature.DEFAULT_KNN_K
    vim_dim: int | None = None  # None -> dimension rule (1000 if d>1000 else 512, capped at d-1)
    vim_center_sign: int = 1
    ash_percentile: float = mixed.DEFAULT_PERCENTILE
    react_percentile: float = mixed.DEFAULT_PERCENTILE
    dice_keep_fraction: float = mixed.DEFAULT_KEEP_FRACTION
    lard_resolution: int = latent.DEFAULT_RESOLUTION
    reg_epsilon: float | None = None  # None -> 1e-6 * trace(Sigma)/d
    seed: int = 0

    def as_dict(self) -> dict:
        return {
            "energy_temperature": self.energy_temperature,
            "gen_lambda": self.gen_lambda,
            "knn_k": self.knn_k,
            "vim_dim": self.vim_dim,
            "vim_center_sign": self.vim_center_sign,
            "ash_percentile": self.ash_percentile,
            "react_percentile": self.react_percentile,
            "dice_keep_fraction": self.dice_keep_fraction,
            "lard_resolution": self.lard_resolution,
            "reg_epsilon": self.reg_epsilon,
            "seed": self.seed,
        }


def fit_method(
    method: str,
    config: ScoringConfig,
    train_records: Sequence | None = None,
    head: HeadWeights | None = None,
    train_pooled: Sequence[PooledLatent] | None = None,
    num_classes: int | None = None,
):
    """Fit the method's state on ID training objects; None for fit-free methods."""
    info = _info(method)
    if not info.needs_fit:
        return None
    if info.needs_head and head is None:
        raise ConfigurationError(f"method {method!r} needs head weights")
    if info.needs_latent:
        if train_pooled is None:
            raise ConfigurationError(f"method {method!r} needs pooled latent vectors")
        return latent.fit_lard(train_pooled, num_classes, config.reg_epsilon)
    if train_records is None:
        raise ConfigurationError(f"method {method!r} needs training records")
    if method == "knn":
        return feature.fit_knn_bank(train_records, config.knn_k)
    if method in ("mahalanobis", "ddu"):
        return feature.fit_gaussian_bank(train_records, num_classes, config.reg_epsilon)
    if method == "vim":
        return mixed.fit_vim(
            train_records,
            head,
            D=config.vim_dim,
            seed=config.seed,
            center_sign=config.vim_center_sign,
        )
    if method == "ash":
        return mixed.fit_activation_state(train_records, head, "ash", config.ash_percentile)
    if method == "react":
        return mixed.fit_activation_state(train_records, head, "react", config.react_percentile)
    if method == "dice":
        return mixed.fit_activation_state(
            train_records, head, "dice", keep_fraction=config.dice_keep_fraction
        )
    if method == "dice_react":
        return mixed.fit_activation_state(
            train_records, head, "dice_react", config.react_percentile, config.dice_keep_fraction
        )
    raise ConfigurationError(f"no fit path for method {method!r}")


def _score_one(method, config, record, state, head, pooled_lookup):
    if method == "msp":
        return output.msp_score(record.logits)
    if method == "energy":
        return output.energy_score(record.logits, config.energy_temperature)
    if method == "gen":
        return output.gen_score(output.softmax_from_logits(record.logits), config.gen_lambda)
    if method == "knn":
        return feature.knn_score(state, _features_of(record))
    if method == "mahalanobis":
        return feature.mahalanobis_score(state, _features_of(record))
    if method == "ddu":
        return feature.ddu_score(state, _features_of(record))
    if method == "vim":
        return mixed.vim_score(state, _features_of(record), record.logits)
    if method in ("ash", "dice", "react", "dice_react"):
        return mixed.clipped_energy_score(state, head, _features_of(record))
    if method == "lard":
        key = (record.image_id, record.det_index)
        if key not in pooled_lookup:
            raise InputError(f"no pooled latent vector for {key}")
        return latent.lard_score(state, pooled_lookup[key])
    raise ConfigurationError(f"unknown method {method!r}")


def _features_of(record) -> np.ndarray:
    if record.features is None:
        raise InputError(
            f"record without features (image_id={record.image_id} det_index={record.det_index})"
        )
    return np.asarray(record.features, dtype=np.float64)


def score_detections(
    method: str,
    records: Sequence,
    config: ScoringConfig,
    state=None,
    head: HeadWeights | None = None,
    pooled: Sequence[PooledLatent] | None = None,
) -> list[IdnessScore]:
    """Score every record, returned in deterministic (image_id, det_index) order."""
    info = _info(method)
    if info.needs_fit and state is None:
        raise ConfigurationError(f"method {method!r} requires a fitted state")
    pooled_lookup = {}
    if pooled is not None:
        pooled_lookup = {(p.image_id, p.det_index): p for p in pooled}
    scores = []
    for rec in sorted(records, key=lambda r: (r.image_id, r.det_index)):
        value = _score_one(method, config, rec, state, head, pooled_lookup)
        if not np.isfinite(value):
            raise NumericalError(
                f"non-finite {method} score for "
                f"(image_id={rec.image_id} det_index={rec.det_index})"
            )
        scores.append(IdnessScore(float(value), method, rec.image_id, rec.det_index))
    return scores


def _info(method: str) -> MethodInfo:
    if method not in METHODS:
        raise ConfigurationError(
            f"unknown method {method!r}; known: {', '.join(sorted(METHODS))}"
        )
    return METHODS[method]


# ---------------------------------------------------------------------------
# state serialization (FMYC container records tagged state:<method>)


def _state_payload(state) -> bytes:
    w = PayloadWriter()
    w.u16(STATE_VERSION)
    if isinstance(state, GaussianBankState):
        w.str_field("gaussian")
        n_classes, d = state.class_means.shape
        w.u32(n_classes)
        w.u32(d)
        w.f32(state.reg_epsilon)
        w.f32_array(state.class_means)
        w.f32_array(state.cov_factor)
        w.f32_array(state.class_priors)
        for flag in state.fitted:
            w.u8(1 if flag else 0)
    elif isinstance(state, KnnBankState):
        w.str_field("knn")
        n, d = state.normalized_train.shape
        w.u32(n)
        w.u32(d)
        w.u32(state.k)
        w.f32_array(state.normalized_train)
    elif isinstance(state, VimState):
        w.str_field("vim")
        d = state.dim
        r = state.residual_basis.shape[1]
        w.u32(d)
        w.u32(r)
        w.u32(state.D)
        w.f32(state.alpha)
        w.f32_array(state.offset)
        w.f32_array(state.residual_basis)
    elif isinstance(state, ActivationClipState):
        w.str_field("clip")
        w.str_field(state.method)
        w.f32(state.global_threshold)
        w.f32(state.percentile)
        w.f32(state.keep_fraction)
        if state.sparsified_W is None:
            w.u8(0)
        else:
            w.u8(1)
            w.u32(state.sparsified_W.shape[0])
            w.u32(state.sparsified_W.shape[1])
            w.f32_array(state.sparsified_W)
    else:
        raise ConfigurationError(f"cannot serialize state of type {type(state).__name__}")
    return w.getvalue()


def _state_from_payload(payload: bytes, context: str):
    r = PayloadReader(payload, context)
    version = r.u16()
    if version != STATE_VERSION:
        raise ConfigurationError(f"{context}: unsupported state version {version}")
    kind = r.str_field()
    if kind == "gaussian":
        n_classes, d = r.u32(), r.u32()
        reg = r.f32()
        means = r.f32_array(n_classes * d).reshape(n_classes, d)
        factor = r.f32_array(d * d).reshape(d, d)
        priors = r.f32_array(n_classes)
        fitted = np.array([r.u8() == 1 for _ in range(n_classes)], dtype=bool)
        r.expect_exhausted()
        return GaussianBankState(means, factor, priors, reg, fitted)
    if kind == "knn":
        n, d, k = r.u32(), r.u32(), r.u32()
        rows = r.f32_array(n * d).reshape(n, d)
        r.expect_exhausted()
        return KnnBankState(rows, k)
    if kind == "vim":
        d, res, dim = r.u32(), r.u32(), r.u32()
        alpha = r.f32()
        offset = r.f32_array(d)
        basis = r.f32_array(d * res).reshape(d, res)
        r.expect_exhausted()
        return VimState(offset, basis, alpha, dim)
    if kind == "clip":
        method = r.str_field()
        threshold = r.f32()
        percentile = r.f32()
        keep = r.f32()
        sparsified = None
        if r.u8() == 1:
            n_classes, d = r.u32(), r.u32()
            sparsified = r.f32_array(n_classes * d).reshape(n_classes, d)
        r.expect_exhausted()
        return ActivationClipState(method, threshold, percentile, sparsified, keep)
    raise ConfigurationError(f"{context}: unknown state kind {kind!r}")


def save_state(path: str, method: str, state) -> None:
    with open_writer(path) as fh:
        append_record(fh, f"state:{method}", _state_payload(state))


def load_state(path: str, method: str | None = None):
    for tag, payload in iter_records(path):
        if not tag.startswith("state:"):
            raise ConfigurationError(f"{path}: expected a state record, found {tag!r}")
        tag_method = tag.split(":", 1)[1]
        if method is not None and tag_method != method:
            raise ConfigurationError(
                f"{path}: state is for method {tag_method!r}, expected {method!r}"
            )
        return _state_from_payload(payload, f"{path} [{tag}]")
    raise ConfigurationError(f"{path}: container holds no records")
