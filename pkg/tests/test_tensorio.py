"""FMYC binary container: round-trips, truncation, validation."""

import struct

import numpy as np
import pytest

from oodeval import tensorio as tio
from oodeval.errors import SchemaError, TruncationError, ValidationError


def test_head_round_trip_bit_identical(tmp_path):
    path = str(tmp_path / "head.fmyc")
    W = np.array([[0.25, -1.5, 3.0], [2.0, 0.125, -0.75]], dtype=np.float32)
    b = np.array([0.5, -2.0], dtype=np.float32)
    tio.save_head(path, tio.HeadWeights(W, b))
    head = tio.load_head(path)
    assert head.W.shape == (2, 3)
    assert head.b.shape == (2,)
    # f32 payloads widen to f64 without change for f32-representable values
    assert np.array_equal(head.W, W.astype(np.float64))
    assert np.array_equal(head.b, b.astype(np.float64))


def test_head_truncation(tmp_path):
    path = str(tmp_path / "head.fmyc")
    # header says (2, 3) but only 7 floats follow (6 weights + 2 bias expected)
    payload = struct.pack("<II", 2, 3) + b"\x00" * (4 * 7)
    with tio.open_writer(path) as fh:
        tio.append_record(fh, tio.TAG_HEAD, payload)
    with pytest.raises(TruncationError):
        tio.load_head(path)


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.fmyc")
    with open(path, "wb") as fh:
        fh.write(b"NOPE\x01\x00")
    with pytest.raises(SchemaError, match="FMYC"):
        tio.load_head(path)


def test_feature_map_stream_order_and_values(tmp_path):
    path = str(tmp_path / "maps.fmyc")
    m1 = tio.FeatureMapRecord("img1", "layer3", np.arange(8.0).reshape(2, 2, 2), 0.5)
    m2 = tio.FeatureMapRecord("img2", "layer3", np.ones((1, 3, 3)), 0.25)
    tio.save_feature_maps(path, [m1, m2])
    loaded = list(tio.load_feature_maps(path))
    assert [m.image_id for m in loaded] == ["img1", "img2"]
    assert loaded[0].shape == (2, 2, 2)
    assert np.array_equal(loaded[0].data, m1.data)
    assert loaded[1].spatial_scale == 0.25


def test_feature_map_single_record(tmp_path):
    path = str(tmp_path / "map.fmyc")
    tio.save_feature_maps(path, [tio.FeatureMapRecord("a", "l", np.zeros((2, 2, 2)), 1.0)])
    (rec,) = tio.load_feature_maps(path)
    assert rec.data.shape == (2, 2, 2)


def test_feature_map_truncated_payload(tmp_path):
    path = str(tmp_path / "maps.fmyc")
    m = tio.FeatureMapRecord("img1", "l", np.zeros((2, 2, 2)), 1.0)
    tio.save_feature_maps(path, [m])
    raw = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(raw[:-4])  # drop the last float
    with pytest.raises(TruncationError):
        list(tio.load_feature_maps(path))


def test_spatial_scale_must_be_positive():
    with pytest.raises(ValidationError, match="spatial_scale"):
        tio.FeatureMapRecord("a", "l", np.zeros((1, 2, 2)), 0.0)
    with pytest.raises(ValidationError, match="spatial_scale"):
        tio.FeatureMapRecord("a", "l", np.zeros((1, 2, 2)), -1.0)


def test_state_round_trips(tmp_path):
    from oodeval.scoring import load_state, save_state
    from oodeval.scoring.feature import GaussianBankState, KnnBankState
    from oodeval.scoring.mixed import ActivationClipState, VimState

    path = str(tmp_path / "state.fmyc")

    g = GaussianBankState(
        class_means=np.array([[1.0, 2.0], [np.nan, np.nan]]),
        cov_factor=np.array([[1.0, 0.0], [0.5, 2.0]]),
        class_priors=np.array([1.0, 0.0]),
        reg_epsilon=0.5,
        fitted=np.array([True, False]),
    )
    save_state(path, "mahalanobis", g)
    g2 = load_state(path, "mahalanobis")
    assert np.array_equal(g2.class_means[0], g.class_means[0])
    assert np.isnan(g2.class_means[1]).all()
    assert np.array_equal(g2.fitted, g.fitted)

    save_state(path, "knn", KnnBankState(np.array([[0.6, 0.8], [0.0, 1.0]]), 2))
    k2 = load_state(path, "knn")
    assert k2.k == 2 and k2.normalized_train.shape == (2, 2)

    save_state(path, "vim", VimState(np.array([0.5, 0.0]), np.array([[0.0], [1.0]]), 1.5, 1))
    v2 = load_state(path, "vim")
    assert v2.D == 1 and v2.alpha == 1.5 and v2.residual_basis.shape == (2, 1)

    save_state(path, "dice", ActivationClipState("dice", 0.25, 90.0, np.zeros((2, 3)), 0.5))
    c2 = load_state(path, "dice")
    assert c2.method == "dice" and c2.sparsified_W.shape == (2, 3)

    save_state(path, "react", ActivationClipState("react", 0.25, 90.0, None, 1.0))
    assert load_state(path, "react").sparsified_W is None
