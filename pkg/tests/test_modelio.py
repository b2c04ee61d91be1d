import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from parasnn.activations import ActivationSpec
from parasnn.convert import CalibrationConfig, ConvertedNetwork, QCFS_EQ_CASE, convert_pipeline
from parasnn.graph import ActivationLayer, Conv2dLayer, LayerGraph, LinearLayer
from parasnn.modelio import (
    CIFAR10_RECORD,
    load_cifar10,
    load_model,
    save_model,
)
from parasnn.numeric import fold_batchnorm
from parasnn.runtime import ann_forward
from parasnn.synth import make_synth_convnet, make_synth_mlp, synth_dataset


def _assert_graphs_equal(a: LayerGraph, b: LayerGraph):
    assert a.input_shape == b.input_shape
    assert len(a.layers) == len(b.layers)
    for la, lb in zip(a.layers, b.layers):
        assert la.kind == lb.kind
        if isinstance(la, (LinearLayer, Conv2dLayer)):
            assert_array_equal(la.weight, lb.weight)
            assert_array_equal(la.bias, lb.bias)
        if isinstance(la, Conv2dLayer):
            assert (la.stride, la.padding) == (lb.stride, lb.padding)
        if isinstance(la, ActivationLayer):
            sa, sb = la.spec, lb.spec
            assert sa.variant == sb.variant
            assert sa.levels == sb.levels
            for field in ("threshold", "shift", "dist_shift", "dist_scale"):
                va, vb = getattr(sa, field), getattr(sb, field)
                if va is None:
                    assert vb is None
                else:
                    assert_array_equal(va, vb)


@pytest.mark.parametrize("maker", [
    lambda: make_synth_mlp(seed=21, levels=8),
    lambda: make_synth_convnet(seed=22, conv_layers=3, levels=4),
])
def test_ann_roundtrip_bit_exact(maker, tmp_path):
    g = maker()
    path = tmp_path / "model.json"
    save_model(g, str(path))
    loaded = load_model(str(path))
    assert isinstance(loaded, LayerGraph)
    _assert_graphs_equal(g, loaded)
    x = synth_dataset(seed=1, dims=g.input_shape, classes=10, n=16).x
    assert_array_equal(ann_forward(loaded, x), ann_forward(g, x))


def test_ann_roundtrip_per_channel_activation(tmp_path):
    w = np.eye(3, dtype=np.float32)
    g = LayerGraph(
        [LinearLayer(w, np.zeros(3, dtype=np.float32)),
         ActivationLayer(ActivationSpec("da_qcfs", threshold=[1.0, 2.0, 0.5], levels=4,
                                        dist_shift=[0.1, 0.0, -0.1],
                                        dist_scale=[0.0, 0.2, 0.0]))],
        (3,),
    )
    path = tmp_path / "chan.json"
    save_model(g, str(path))
    _assert_graphs_equal(g, load_model(str(path)))


def test_snn_roundtrip_bit_exact(tmp_path):
    g = make_synth_mlp(seed=23, levels=4)
    net = convert_pipeline(g, [], 4, CalibrationConfig(conversion_case=QCFS_EQ_CASE))
    path = tmp_path / "snn.json"
    save_model(net, str(path))
    loaded = load_model(str(path))
    assert isinstance(loaded, ConvertedNetwork)
    assert loaded.steps == 4
    assert loaded.conversion_case == QCFS_EQ_CASE
    for la, lb in zip(net.graph.layers, loaded.graph.layers):
        assert la.kind == lb.kind
        if hasattr(la, "params"):
            assert_array_equal(la.params.shift, lb.params.shift)
            assert_array_equal(np.asarray(la.params.fire_threshold),
                               np.asarray(lb.params.fire_threshold))
            assert_array_equal(np.asarray(la.params.spike_amplitude),
                               np.asarray(lb.params.spike_amplitude))
    from parasnn.runtime import snn_parallel_forward
    x = synth_dataset(seed=2, dims=g.input_shape, classes=10, n=8).x
    assert_array_equal(snn_parallel_forward(loaded, x).logits,
                       snn_parallel_forward(net, x).logits)


def test_blob_checksum_detects_corruption(tmp_path):
    g = make_synth_mlp(seed=24, levels=4, depth=2)
    path = tmp_path / "m.json"
    save_model(g, str(path))
    blob = tmp_path / "m.bin"
    raw = bytearray(blob.read_bytes())
    raw[10] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_model(str(path))


def test_blob_truncation_names_the_tensor(tmp_path):
    g = make_synth_mlp(seed=25, levels=4, depth=2)
    path = tmp_path / "m.json"
    save_model(g, str(path))
    manifest = json.loads(path.read_text())
    blob = tmp_path / "m.bin"
    raw = blob.read_bytes()[:-8]
    blob.write_bytes(raw)
    manifest["blob_bytes"] = len(raw)
    manifest["blob_crc32"] = None
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="truncated"):
        load_model(str(path))


def test_version_gate(tmp_path):
    g = make_synth_mlp(seed=26, levels=4, depth=2)
    path = tmp_path / "m.json"
    save_model(g, str(path))
    manifest = json.loads(path.read_text())
    manifest["version"] = 99
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="version"):
        load_model(str(path))


def test_maxpool_rejected(tmp_path):
    manifest = {
        "version": 1,
        "model_type": "ann",
        "input_shape": [1, 4, 4],
        "blob_bytes": 0,
        "blob_crc32": 0,
        "layers": [{"name": "pool0", "kind": "maxpool2d", "k": 2}],
    }
    path = tmp_path / "mp.json"
    path.write_text(json.dumps(manifest))
    (tmp_path / "mp.bin").write_bytes(b"")
    with pytest.raises(ValueError, match="max-pool"):
        load_model(str(path))


def test_unknown_layer_kind_rejected(tmp_path):
    manifest = {
        "version": 1,
        "model_type": "ann",
        "input_shape": [4],
        "blob_bytes": 0,
        "blob_crc32": 0,
        "layers": [{"name": "x", "kind": "dropout"}],
    }
    path = tmp_path / "u.json"
    path.write_text(json.dumps(manifest))
    (tmp_path / "u.bin").write_bytes(b"")
    with pytest.raises(ValueError, match="unknown layer kind"):
        load_model(str(path))


def _write_blob(tmp_path, name, arrays):
    chunks, refs, offset = [], [], 0
    for arr in arrays:
        raw = np.asarray(arr, dtype=np.float32).astype("<f4").tobytes()
        refs.append({"shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    (tmp_path / name).write_bytes(blob)
    return refs, blob


def test_batchnorm_folded_on_load(tmp_path):
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 6)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    gamma = rng.uniform(0.5, 2.0, size=4).astype(np.float32)
    beta = rng.normal(size=4).astype(np.float32)
    mean = rng.normal(size=4).astype(np.float32)
    var = rng.uniform(0.5, 2.0, size=4).astype(np.float32)

    import zlib
    refs, blob = _write_blob(tmp_path, "bn.bin", [w, b, gamma, beta, mean, var])
    manifest = {
        "version": 1,
        "model_type": "ann",
        "input_shape": [6],
        "blob": "bn.bin",
        "blob_bytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
        "layers": [
            {"name": "fc", "kind": "linear", "weight": refs[0], "bias": refs[1]},
            {"name": "bn", "kind": "batchnorm", "gamma": refs[2], "beta": refs[3],
             "mean": refs[4], "var": refs[5], "eps": 1e-5},
        ],
    }
    path = tmp_path / "bn.json"
    path.write_text(json.dumps(manifest))
    g = load_model(str(path))
    assert len(g.layers) == 1
    wf, bf = fold_batchnorm(w, b, gamma, beta, mean, var, eps=1e-5)
    assert_array_equal(g.layers[0].weight, wf)
    assert_array_equal(g.layers[0].bias, bf)


def test_batchnorm_requires_preceding_affine(tmp_path):
    import zlib
    refs, blob = _write_blob(tmp_path, "bad.bin",
                             [np.ones(2), np.zeros(2), np.zeros(2), np.ones(2)])
    manifest = {
        "version": 1,
        "model_type": "ann",
        "input_shape": [2],
        "blob": "bad.bin",
        "blob_bytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
        "layers": [
            {"name": "bn", "kind": "batchnorm", "gamma": refs[0], "beta": refs[1],
             "mean": refs[2], "var": refs[3]},
        ],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="must follow"):
        load_model(str(path))


def _cifar_file(path, labels, pixel_value):
    records = []
    for lab in labels:
        rec = bytes([lab]) + bytes([pixel_value] * (CIFAR10_RECORD - 1))
        records.append(rec)
    path.write_bytes(b"".join(records))


def test_cifar10_loader_scaling(tmp_path):
    f = tmp_path / "batch.bin"
    _cifar_file(f, [3, 7], pixel_value=255)
    data = load_cifar10(str(f), mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
    assert data.x.shape == (2, 3, 32, 32)
    assert data.x.dtype == np.float32
    assert_array_equal(data.labels, [3, 7])
    assert_allclose(data.x, 1.0, rtol=0)  # byte 255 scales to exactly 1.0


def test_cifar10_loader_normalization_and_dir(tmp_path):
    d = tmp_path / "batches"
    d.mkdir()
    _cifar_file(d / "data_1.bin", [1], pixel_value=0)
    _cifar_file(d / "data_2.bin", [2], pixel_value=255)
    data = load_cifar10(str(d), mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
    assert data.x.shape == (2, 3, 32, 32)
    assert_allclose(data.x[0], -2.0, rtol=1e-6)
    assert_allclose(data.x[1], 2.0, rtol=1e-6)


def test_cifar10_loader_size_gate(tmp_path):
    f = tmp_path / "broken.bin"
    f.write_bytes(b"\x00" * (CIFAR10_RECORD + 1))
    with pytest.raises(ValueError, match="not a multiple"):
        load_cifar10(str(f))
    empty = tmp_path / "emptydir"
    empty.mkdir()
    with pytest.raises(ValueError, match="no .bin files"):
        load_cifar10(str(empty))


def test_dataset_handle_batches():
    data = synth_dataset(seed=1, dims=(4,), classes=3, n=10)
    sizes = [b.shape[0] for b in data.batches(4)]
    assert sizes == [4, 4, 2]
    assert data.source["generator"] == "pcg64"
