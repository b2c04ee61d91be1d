"""Model and dataset I/O.

Models travel as a JSON manifest plus a raw binary blob of little-endian
32-bit reals. The manifest lists layers in execution order with their
hyperparameters; every tensor field is either an inline scalar or a
{"shape", "offset"} reference into the blob. Anything that can export
weights can write this format.

Batch-norm entries are folded into the preceding affine layer at load time,
so in-memory graphs never contain them. Max-pooling is rejected outright:
the conversion math requires rate-linear layers.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activations import ActivationSpec
from .convert import ConvertedNetwork
from .graph import (
    ActivationLayer,
    AvgPool2dLayer,
    Conv2dLayer,
    FlattenLayer,
    LayerGraph,
    LinearLayer,
    ResidualBegin,
    ResidualJoin,
    SpikingLayer,
)
from .neuron import ParallelNeuronParams
from .numeric import F32, fold_batchnorm

MANIFEST_VERSION = 1

CIFAR10_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


@dataclass
class DatasetHandle:
    """Inputs, labels, and enough provenance to regenerate or renormalize."""

    x: np.ndarray
    labels: np.ndarray
    source: dict
    split: str = "evaluation"
    mean: Optional[tuple] = None
    std: Optional[tuple] = None

    def batches(self, batch_size: int):
        """Input-only batches in a fixed order (calibration consumption)."""
        for i in range(0, self.x.shape[0], batch_size):
            yield self.x[i : i + batch_size]


class _BlobWriter:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def add(self, arr: np.ndarray) -> dict:
        arr = np.asarray(arr, dtype=F32)
        raw = arr.astype("<f4").tobytes()
        ref = {"shape": list(arr.shape), "offset": self.offset}
        self.chunks.append(raw)
        self.offset += len(raw)
        return ref

    def payload(self) -> bytes:
        return b"".join(self.chunks)


def _tensor_field(writer: _BlobWriter, value):
    """Scalar -> inline float; array -> blob reference; None passes through."""
    if value is None:
        return None
    arr = np.asarray(value)
    if arr.ndim == 0:
        return float(arr)
    return writer.add(arr)


def _read_tensor(entry, blob: bytes, layer_name: str, tensor_name: str):
    if entry is None:
        return None
    if isinstance(entry, (int, float)):
        return F32(entry)
    shape = tuple(int(d) for d in entry["shape"])
    offset = int(entry["offset"])
    count = int(np.prod(shape)) if shape else 1
    end = offset + 4 * count
    if offset < 0 or end > len(blob):
        raise ValueError(
            f"layer {layer_name!r}: tensor {tensor_name!r} spans bytes "
            f"[{offset}, {end}) but the blob holds {len(blob)}; blob truncated?"
        )
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return arr.reshape(shape).astype(F32)


def _layer_entry(layer, name: str, writer: _BlobWriter) -> dict:
    e = {"name": name, "kind": layer.kind}
    if isinstance(layer, LinearLayer):
        e["weight"] = writer.add(layer.weight)
        e["bias"] = writer.add(layer.bias)
    elif isinstance(layer, Conv2dLayer):
        e["stride"] = layer.stride
        e["padding"] = layer.padding
        e["weight"] = writer.add(layer.weight)
        e["bias"] = writer.add(layer.bias)
    elif isinstance(layer, AvgPool2dLayer):
        e["k"] = layer.k
    elif isinstance(layer, FlattenLayer):
        pass
    elif isinstance(layer, ActivationLayer):
        s = layer.spec
        e["variant"] = s.variant
        e["levels"] = s.levels
        e["threshold"] = _tensor_field(writer, s.threshold)
        e["shift"] = _tensor_field(writer, s.shift)
        e["dist_shift"] = _tensor_field(writer, s.dist_shift)
        e["dist_scale"] = _tensor_field(writer, s.dist_scale)
    elif isinstance(layer, SpikingLayer):
        p = layer.params
        e["steps"] = p.steps
        e["shift"] = writer.add(p.shift)
        e["fire_threshold"] = _tensor_field(writer, p.fire_threshold)
        e["spike_amplitude"] = _tensor_field(writer, p.spike_amplitude)
    elif isinstance(layer, (ResidualBegin, ResidualJoin)):
        e["id"] = layer.id
    else:
        raise ValueError(f"cannot serialize layer of type {type(layer).__name__}")
    return e


def save_model(obj, manifest_path: str, blob_path: Optional[str] = None) -> None:
    """Write a LayerGraph or ConvertedNetwork as manifest + blob."""
    if isinstance(obj, ConvertedNetwork):
        graph, model_type = obj.graph, "snn"
    elif isinstance(obj, LayerGraph):
        graph, model_type = obj, "ann"
    else:
        raise ValueError(f"cannot save object of type {type(obj).__name__}")
    if blob_path is None:
        blob_path = _default_blob_path(manifest_path)
    writer = _BlobWriter()
    entries = [
        _layer_entry(layer, f"layer{i}", writer) for i, layer in enumerate(graph.layers)
    ]
    blob = writer.payload()
    manifest = {
        "version": MANIFEST_VERSION,
        "model_type": model_type,
        "input_shape": list(graph.input_shape),
        "blob": os.path.basename(blob_path),
        "blob_bytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
        "layers": entries,
    }
    if model_type == "snn":
        manifest["steps"] = obj.steps
        manifest["conversion_case"] = obj.conversion_case
    with open(blob_path, "wb") as fh:
        fh.write(blob)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _default_blob_path(manifest_path: str) -> str:
    base, ext = os.path.splitext(manifest_path)
    return base + ".bin"


def load_model(manifest_path: str, blob_path: Optional[str] = None):
    """Load a manifest + blob pair back into a LayerGraph or ConvertedNetwork.

    Batch-norm entries are folded into the preceding affine layer; max-pool
    entries are rejected.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {version!r}")
    if blob_path is None:
        declared = manifest.get("blob")
        if declared:
            blob_path = os.path.join(os.path.dirname(manifest_path) or ".", declared)
        else:
            blob_path = _default_blob_path(manifest_path)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    expected_bytes = manifest.get("blob_bytes")
    if expected_bytes is not None and expected_bytes != len(blob):
        raise ValueError(
            f"blob holds {len(blob)} bytes but the manifest declares {expected_bytes}"
        )
    expected_crc = manifest.get("blob_crc32")
    if expected_crc is not None and expected_crc != zlib.crc32(blob):
        raise ValueError("blob checksum mismatch; file corrupted?")

    layers = []
    for entry in manifest["layers"]:
        kind = entry.get("kind")
        name = entry.get("name", f"layer{len(layers)}")
        if kind in ("maxpool2d", "maxpool"):
            raise ValueError(
                f"layer {name!r}: max-pooling is not supported by the conversion "
                f"pipeline; use average pooling"
            )
        if kind == "linear":
            layers.append(LinearLayer(
                _read_tensor(entry["weight"], blob, name, "weight"),
                _read_tensor(entry["bias"], blob, name, "bias"),
            ))
        elif kind == "conv2d":
            layers.append(Conv2dLayer(
                _read_tensor(entry["weight"], blob, name, "weight"),
                _read_tensor(entry["bias"], blob, name, "bias"),
                stride=int(entry.get("stride", 1)),
                padding=int(entry.get("padding", 0)),
            ))
        elif kind == "batchnorm":
            if not layers or not isinstance(layers[-1], (LinearLayer, Conv2dLayer)):
                raise ValueError(
                    f"layer {name!r}: batchnorm must follow a linear or conv layer"
                )
            prev = layers[-1]
            w, b = fold_batchnorm(
                prev.weight,
                prev.bias,
                _read_tensor(entry["gamma"], blob, name, "gamma"),
                _read_tensor(entry["beta"], blob, name, "beta"),
                _read_tensor(entry["mean"], blob, name, "mean"),
                _read_tensor(entry["var"], blob, name, "var"),
                eps=float(entry.get("eps", 1e-5)),
            )
            if isinstance(prev, Conv2dLayer):
                layers[-1] = Conv2dLayer(w, b, stride=prev.stride, padding=prev.padding)
            else:
                layers[-1] = LinearLayer(w, b)
        elif kind == "avgpool2d":
            layers.append(AvgPool2dLayer(int(entry["k"])))
        elif kind == "flatten":
            layers.append(FlattenLayer())
        elif kind == "activation":
            layers.append(ActivationLayer(ActivationSpec(
                entry["variant"],
                threshold=_read_tensor(entry.get("threshold"), blob, name, "threshold"),
                levels=int(entry.get("levels") or 0),
                shift=_read_tensor(entry.get("shift"), blob, name, "shift"),
                dist_shift=_read_tensor(entry.get("dist_shift"), blob, name, "dist_shift"),
                dist_scale=_read_tensor(entry.get("dist_scale"), blob, name, "dist_scale"),
            )))
        elif kind == "spiking":
            layers.append(SpikingLayer(ParallelNeuronParams(
                int(entry["steps"]),
                _read_tensor(entry["shift"], blob, name, "shift"),
                _read_tensor(entry["fire_threshold"], blob, name, "fire_threshold"),
                _read_tensor(entry["spike_amplitude"], blob, name, "spike_amplitude"),
            )))
        elif kind == "residual_begin":
            layers.append(ResidualBegin(int(entry["id"])))
        elif kind == "residual_join":
            layers.append(ResidualJoin(int(entry["id"])))
        else:
            raise ValueError(f"layer {name!r}: unknown layer kind {kind!r}")

    graph = LayerGraph(layers, tuple(manifest["input_shape"]))
    if manifest.get("model_type") == "snn":
        return ConvertedNetwork(
            graph, int(manifest["steps"]), manifest["conversion_case"]
        )
    return graph


def load_cifar10(path: str, mean=CIFAR10_MEAN, std=CIFAR10_STD,
                 split: str = "evaluation") -> DatasetHandle:
    """Read CIFAR-10 binary batch file(s): 3073-byte records, label byte first.

    path may be a single .bin file or a directory of them (read in sorted
    order). Pixels are scaled to [0,1] then normalized per channel.
    """
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path) if f.endswith(".bin")
        )
        if not files:
            raise ValueError(f"no .bin files in {path!r}")
    else:
        files = [path]
    raws = []
    for f in files:
        with open(f, "rb") as fh:
            raw = fh.read()
        if len(raw) % CIFAR10_RECORD:
            raise ValueError(
                f"{f!r}: size {len(raw)} is not a multiple of {CIFAR10_RECORD}"
            )
        raws.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD))
    records = np.concatenate(raws, axis=0)
    labels = records[:, 0].astype(np.int64)
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).astype(F32) / F32(255)
    m = np.asarray(mean, dtype=F32).reshape(1, 3, 1, 1)
    s = np.asarray(std, dtype=F32).reshape(1, 3, 1, 1)
    x = (pixels - m) / s
    return DatasetHandle(
        x=x,
        labels=labels,
        source={"kind": "cifar10-binary", "path": path},
        split=split,
        mean=tuple(mean),
        std=tuple(std),
    )
