"""Deterministic synthetic data and random-weight model generators.

Everything here is seeded through numpy's PCG64 generator, so identical
seeds give identical tensors on every platform. The models exist to make
conversion properties testable without trained weights: the layer-mapping
guarantees are weight-agnostic.
"""

from __future__ import annotations

import numpy as np

from .activations import QCFS, RELU, ActivationSpec
from .graph import (
    ActivationLayer,
    AvgPool2dLayer,
    Conv2dLayer,
    FlattenLayer,
    LayerGraph,
    LinearLayer,
)
from .modelio import DatasetHandle
from .numeric import F32


def synth_dataset(seed: int, dims, classes: int, n: int, noise: float = 0.25,
                  mean_scale: float = 1.0, split: str = "calibration") -> DatasetHandle:
    """Class-conditional Gaussian blobs: fixed per-class means plus noise.

    dims is the per-sample shape. With the defaults the class means are
    separated by about 4x the noise scale per coordinate, enough for a
    linear probe to score well above chance.
    """
    if n < 1:
        raise ValueError(f"synth_dataset: n must be >= 1, got {n}")
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, size=(classes,) + dims)
    labels = rng.integers(0, classes, size=n)
    x = means[labels] + rng.normal(0.0, noise, size=(n,) + dims)
    return DatasetHandle(
        x=x.astype(F32),
        labels=labels.astype(np.int64),
        source={
            "kind": "synthetic",
            "generator": "pcg64",
            "seed": int(seed),
            "dims": list(dims),
            "classes": int(classes),
            "n": int(n),
            "noise": float(noise),
            "mean_scale": float(mean_scale),
        },
        split=split,
    )


def _act(rng, activation: str, levels: int, threshold) -> ActivationLayer:
    if activation == RELU:
        return ActivationLayer(ActivationSpec(RELU))
    if activation == QCFS:
        return ActivationLayer(ActivationSpec(QCFS, threshold=threshold, levels=levels))
    raise ValueError(f"unsupported generator activation {activation!r}")


def _he_linear(rng, fan_in: int, fan_out: int, bias_scale: float = 0.05) -> LinearLayer:
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
    b = rng.normal(0.0, bias_scale, size=fan_out)
    return LinearLayer(w.astype(F32), b.astype(F32))


def _he_conv(rng, cin: int, cout: int, k: int, bias_scale: float = 0.05) -> Conv2dLayer:
    w = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), size=(cout, cin, k, k))
    b = rng.normal(0.0, bias_scale, size=cout)
    return Conv2dLayer(w.astype(F32), b.astype(F32), stride=1, padding=k // 2)


def make_synth_mlp(seed: int, depth: int = 4, width: int = 32, in_dim: int = 16,
                   classes: int = 10, activation: str = QCFS,
                   levels: int = 8) -> LayerGraph:
    """Random fully-connected network: `depth` linear layers, depth-1 activations.

    Per-layer staircase thresholds are scalar, drawn from [0.8, 1.5].
    """
    if depth < 2:
        raise ValueError(f"make_synth_mlp: depth must be >= 2, got {depth}")
    rng = np.random.default_rng(seed)
    layers = []
    d = in_dim
    for _ in range(depth - 1):
        layers.append(_he_linear(rng, d, width))
        theta = F32(rng.uniform(0.8, 1.5))
        layers.append(_act(rng, activation, levels, theta))
        d = width
    layers.append(_he_linear(rng, d, classes))
    return LayerGraph(layers, (in_dim,))


def make_synth_convnet(seed: int, conv_layers: int = 2, channels: int = 8,
                       in_shape=(3, 8, 8), classes: int = 10,
                       activation: str = QCFS, levels: int = 8) -> LayerGraph:
    """Random small convnet: k3 convolutions with activations, pooling, linear head.

    Pooling halves the spatial size after every second conv layer while it
    stays divisible.
    """
    if not (1 <= conv_layers <= 4):
        raise ValueError(f"make_synth_convnet: conv_layers must be 1..4, got {conv_layers}")
    rng = np.random.default_rng(seed)
    c, h, w = (int(d) for d in in_shape)
    layers = []
    cin = c
    for i in range(conv_layers):
        cout = channels * (2 ** (i // 2))
        layers.append(_he_conv(rng, cin, cout, 3))
        theta = F32(rng.uniform(0.8, 1.5))
        layers.append(_act(rng, activation, levels, theta))
        cin = cout
        if i % 2 == 1 and h % 2 == 0 and w % 2 == 0 and min(h, w) >= 4:
            layers.append(AvgPool2dLayer(2))
            h //= 2
            w //= 2
    layers.append(AvgPool2dLayer(2) if h % 2 == 0 and w % 2 == 0 and min(h, w) >= 4
                  else FlattenLayer())
    if isinstance(layers[-1], AvgPool2dLayer):
        h //= 2
        w //= 2
        layers.append(FlattenLayer())
    layers.append(_he_linear(rng, cin * h * w, classes))
    return LayerGraph(layers, tuple(int(d) for d in in_shape))
