"""Dense numeric kernels: linear, conv2d, average pooling, batch-norm folding.

All public functions take and return float32 arrays. Accumulation happens in
float64 with a fixed reduction order, then results are rounded to float32, so
repeated calls are bit-identical.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32
F64 = np.float64


def as_f32(x) -> np.ndarray:
    """Coerce to a float32 ndarray without copying when already float32."""
    return np.asarray(x, dtype=F32)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map y[n,o] = sum_i weight[o,i] * x[n,i] + bias[o].

    x: [N, Cin], weight: [Cout, Cin], bias: [Cout].
    """
    x = as_f32(x)
    weight = as_f32(weight)
    bias = as_f32(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear: input shape {x.shape} does not conform to weight shape {weight.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(
            f"linear: bias shape {bias.shape} does not match output features ({weight.shape[0]},)"
        )
    y = x.astype(F64) @ weight.astype(F64).T + bias.astype(F64)
    return y.astype(F32)


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Direct cross-correlation.

    x: [N, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout].
    Output spatial size is floor((H + 2*padding - kh) / stride) + 1.
    """
    x = as_f32(x)
    weight = as_f32(weight)
    bias = as_f32(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input/weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d: input channels {cin} do not match weight channels {cin_w}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = x.astype(F64)
    if padding > 0:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    w64 = weight.astype(F64)

    # Accumulate one kernel offset at a time; loop order fixes the reduction order.
    y = np.zeros((n, cout, oh, ow), dtype=F64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride]
            y += np.einsum("oc,nchw->nohw", w64[:, :, i, j], patch)
    y += bias.astype(F64)[None, :, None, None]
    return y.astype(F32)


def avgpool2d(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping k x k mean pooling. Spatial dims must divide by k."""
    x = as_f32(x)
    if x.ndim != 4:
        raise ValueError(f"avgpool2d: expected 4-D input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avgpool2d: spatial dims ({h}x{w}) not divisible by window {k}")
    y = x.astype(F64).reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5)) / (k * k)
    return y.astype(F32)


def fold_batchnorm(
    weight: np.ndarray,
    bias: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse a per-channel batch norm into the preceding affine layer.

    Returns (weight', bias') with linear(x, w', b') == batchnorm(linear(x, w, b)).
    Works for conv weights too (leading axis is the output channel).
    """
    weight = as_f32(weight)
    bias = as_f32(bias)
    gamma, beta = as_f32(gamma), as_f32(beta)
    mean, var = as_f32(mean), as_f32(var)
    cout = weight.shape[0]
    for name, arr in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if arr.shape != (cout,):
            raise ValueError(
                f"fold_batchnorm: {name} shape {arr.shape} does not match {cout} output channels"
            )
    denom = var.astype(F64) + eps
    if np.any(denom <= 0):
        raise ValueError("fold_batchnorm: var + eps must be positive")
    scale = gamma.astype(F64) / np.sqrt(denom)
    shape = (cout,) + (1,) * (weight.ndim - 1)
    w_folded = (weight.astype(F64) * scale.reshape(shape)).astype(F32)
    b_folded = ((bias.astype(F64) - mean.astype(F64)) * scale + beta.astype(F64)).astype(F32)
    return w_folded, b_folded


def channel_max(x: np.ndarray) -> np.ndarray:
    """Max over batch and spatial positions, one value per channel."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("channel_max: empty tensor")
    if x.ndim < 2:
        raise ValueError(f"channel_max: need a batched tensor, got shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    return x.max(axis=axes).astype(F32)


def scaled_rate(counts: np.ndarray, amplitude, steps: int) -> np.ndarray:
    """Firing rate from spike counts: count * amplitude / steps.

    Single canonical expression (float64 multiply, then divide, then round to
    float32) shared by the staircase activations and the spike-train readout,
    so the two produce bit-identical results for equal counts.
    """
    if steps < 1:
        raise ValueError(f"scaled_rate: steps must be >= 1, got {steps}")
    out = np.asarray(counts, dtype=F64) * np.asarray(amplitude, dtype=F64) / steps
    return out.astype(F32)


def channel_mean(x: np.ndarray) -> np.ndarray:
    """Mean over batch and spatial positions, one value per channel.

    Channel axis is 1 for feature maps [N,C,...] and the feature axis for
    2-D batches [N,C].
    """
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("channel_mean: empty tensor")
    if x.ndim < 2:
        raise ValueError(f"channel_mean: need a batched tensor, got shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    return x.astype(F64).mean(axis=axes).astype(F32)
