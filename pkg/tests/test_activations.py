import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from parasnn.activations import (
    ActivationSpec,
    boundary_margin,
    channelwise,
    clip_relu,
    da_qcfs,
    qcfs,
    record_thresholds,
    relu,
    staircase_count,
    THRESHOLD_FLOOR,
)
from parasnn.graph import ActivationLayer, LayerGraph, LinearLayer
from parasnn.numeric import scaled_rate


def test_qcfs_point_values():
    a = np.array([0.425, 10.0, -0.2], dtype=np.float32)
    out = qcfs(a, threshold=1.0, levels=4, shift=0.5)
    assert_array_equal(out, np.array([0.5, 1.0, 0.0], dtype=np.float32))


def test_qcfs_default_shift_is_half_threshold():
    a = np.linspace(-0.5, 1.5, 41).astype(np.float32)
    assert_array_equal(qcfs(a, 1.0, 4), qcfs(a, 1.0, 4, shift=0.5))


def test_da_qcfs_point_value():
    out = da_qcfs(np.array([0.425], dtype=np.float32), threshold=1.0, levels=4,
                  shift=0.5, dist_shift=0.05, dist_scale=0.1)
    assert_allclose(out, [0.55], rtol=1e-7)


def test_da_qcfs_reduces_to_qcfs():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 2, size=256).astype(np.float32)
    assert_array_equal(da_qcfs(a, 1.3, 8), qcfs(a, 1.3, 8))


def test_staircase_count_clips_to_levels():
    k = staircase_count([-5.0, 0.2, 99.0], 1.0, 4, 0.5)
    assert_array_equal(k, [0.0, 1.0, 4.0])


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(-10, 10),
    theta=st.floats(0.1, 5),
    levels=st.integers(1, 64),
)
def test_qcfs_output_lies_on_level_grid(a, theta, levels):
    theta = np.float32(theta)
    out = qcfs(np.array([a], dtype=np.float32), theta, levels)
    grid = scaled_rate(np.arange(levels + 1), theta, levels)
    assert out[0] in grid


@settings(max_examples=200, deadline=None)
@given(
    theta=st.floats(0.1, 5),
    levels=st.integers(1, 64),
)
def test_qcfs_monotone_and_saturating(theta, levels):
    theta = np.float32(theta)
    a = np.linspace(-2 * theta, 3 * theta, 301).astype(np.float32)
    out = qcfs(a, theta, levels)
    assert (np.diff(out) >= 0).all()
    assert out[0] == 0
    assert out[-1] == theta  # saturation: levels * theta / levels rounds back exactly


def test_clip_relu_matches_relu_below_threshold():
    a = np.linspace(-1, 0.9, 50).astype(np.float32)
    assert_array_equal(clip_relu(a.reshape(5, 10), 1.0), relu(a).reshape(5, 10))


def test_clip_relu_per_channel():
    x = np.full((1, 2, 2, 2), 5.0, dtype=np.float32)
    out = clip_relu(x, [1.0, 3.0])
    assert_array_equal(out[0, 0], np.full((2, 2), 1.0, dtype=np.float32))
    assert_array_equal(out[0, 1], np.full((2, 2), 3.0, dtype=np.float32))


def test_boundary_margin_hand_values():
    # staircase argument (0.425*4 + 0.5)/1 = 2.2: fractional part 0.2,
    # input-units distance 0.2 * 1/4 = 0.05
    d = boundary_margin(np.array([0.425]), 1.0, 4, 0.5)
    assert_allclose(d, [0.05], atol=1e-12)
    d0 = boundary_margin(np.array([0.375]), 1.0, 4, 0.5)  # argument exactly 2.0
    assert_allclose(d0, [0.0], atol=1e-12)


def test_activation_spec_defaults_and_validation():
    spec = ActivationSpec("qcfs", threshold=1.0, levels=8)
    assert spec.shift == np.float32(0.5)

    da = ActivationSpec("da_qcfs", threshold=2.0, levels=4)
    assert da.dist_shift == 0 and da.dist_scale == 0
    assert da.shift == np.float32(1.0)

    with pytest.raises(ValueError, match="variant"):
        ActivationSpec("sigmoid")
    with pytest.raises(ValueError, match="threshold"):
        ActivationSpec("qcfs", levels=4)
    with pytest.raises(ValueError, match="positive"):
        ActivationSpec("qcfs", threshold=-1.0, levels=4)
    with pytest.raises(ValueError, match="levels"):
        ActivationSpec("qcfs", threshold=1.0, levels=0)
    with pytest.raises(ValueError, match="positive"):
        ActivationSpec("da_qcfs", threshold=1.0, levels=4, dist_scale=-1.5)


def test_activation_spec_apply_dispatch():
    a = np.array([[0.425, -1.0]], dtype=np.float32)
    assert_array_equal(ActivationSpec("relu").apply(a), relu(a))
    assert_array_equal(ActivationSpec("clip_relu", threshold=0.3).apply(a), clip_relu(a, 0.3))
    assert_array_equal(ActivationSpec("qcfs", threshold=1.0, levels=4).apply(a),
                       qcfs(a, 1.0, 4))


def test_activation_spec_copy_is_independent():
    spec = ActivationSpec("da_qcfs", threshold=[1.0, 2.0], levels=4)
    dup = spec.copy()
    dup.threshold[0] = 9.0
    assert spec.threshold[0] == np.float32(1.0)


def test_channelwise_reshape():
    v = np.array([1.0, 2.0], dtype=np.float32)
    assert channelwise(v, 4).shape == (1, 2, 1, 1)
    assert channelwise(np.float32(3.0), 2).shape == ()
    with pytest.raises(ValueError, match="batched"):
        channelwise(v, 1)


def test_record_thresholds_tracks_channel_max():
    w = np.eye(3, dtype=np.float32)
    graph = LayerGraph(
        [LinearLayer(w, np.zeros(3, dtype=np.float32)),
         ActivationLayer(ActivationSpec("relu"))],
        (3,),
    )
    batches = [np.array([[1.0, 0.5, 2.0]], dtype=np.float32),
               np.array([[0.2, 1.5, 0.1]], dtype=np.float32)]
    (th,) = record_thresholds(graph, batches)
    assert_array_equal(th, np.array([1.0, 1.5, 2.0], dtype=np.float32))


def test_record_thresholds_floors_dead_channels():
    w = np.diag([1.0, -1.0]).astype(np.float32)
    graph = LayerGraph(
        [LinearLayer(w, np.zeros(2, dtype=np.float32)),
         ActivationLayer(ActivationSpec("relu"))],
        (2,),
    )
    batches = [np.array([[1.0, 1.0]], dtype=np.float32)]
    with pytest.warns(UserWarning, match="never exceeded zero"):
        (th,) = record_thresholds(graph, batches)
    assert th[0] == np.float32(1.0)
    assert th[1] == np.float32(THRESHOLD_FLOOR)


def test_record_thresholds_rejects_empty_stream():
    graph = LayerGraph([ActivationLayer(ActivationSpec("relu"))], (2,))
    with pytest.raises(ValueError, match="empty"):
        record_thresholds(graph, [])
