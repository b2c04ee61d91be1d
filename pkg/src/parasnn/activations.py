"""Activation family: ReLU, ClipReLU, and the quantized staircase variants.

QCFS is a T-level staircase that matches the expected firing rate of an
integrate-and-fire neuron run for T steps. DA-QCFS adds a learnable input
shift and output amplitude correction, fitted per channel by calibration.

Staircase arguments are evaluated in float64; outputs are float32 through the
shared scaled_rate expression so converted spiking layers can reproduce them
bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numeric import F32, F64, as_f32, scaled_rate

RELU = "relu"
CLIP_RELU = "clip_relu"
QCFS = "qcfs"
DA_QCFS = "da_qcfs"

VARIANTS = (RELU, CLIP_RELU, QCFS, DA_QCFS)

# Dead calibration channels get this threshold instead of zero; the invariant
# is threshold > 0 and a silent channel stays silent either way.
THRESHOLD_FLOOR = 1e-6


def _param(v, name: str):
    """Normalize a scalar-or-per-channel parameter to float32."""
    arr = np.asarray(v, dtype=F32)
    if arr.ndim > 1:
        raise ValueError(f"{name} must be scalar or 1-D per-channel, got shape {arr.shape}")
    return arr if arr.ndim else F32(arr)


def channelwise(v, ndim: int):
    """Reshape a per-channel vector to broadcast against [N, C, ...]."""
    arr = np.asarray(v)
    if arr.ndim == 0:
        return arr
    if ndim < 2:
        raise ValueError(f"per-channel parameter needs a batched tensor, got ndim={ndim}")
    return arr.reshape((1, arr.shape[0]) + (1,) * (ndim - 2))


def relu(a: np.ndarray) -> np.ndarray:
    """Element-wise max(0, a)."""
    return np.maximum(as_f32(a), F32(0))


def clip_relu(a: np.ndarray, threshold) -> np.ndarray:
    """Element-wise min(max(0, a), threshold); threshold broadcast per channel."""
    a = as_f32(a)
    th = _param(threshold, "threshold")
    if np.any(np.asarray(th) <= 0):
        raise ValueError("clip_relu: threshold must be positive")
    return np.minimum(np.maximum(a, F32(0)), channelwise(th, a.ndim))


def staircase_count(a, threshold, levels: int, shift, dist_shift=0.0) -> np.ndarray:
    """Quantization-level count: clip(floor(((a + dist_shift)*levels + shift)/threshold), 0, levels).

    Float64 throughout; returns integer-valued float64.
    """
    if levels < 1:
        raise ValueError(f"staircase_count: levels must be >= 1, got {levels}")
    a64 = np.asarray(a, dtype=F64)
    th = channelwise(np.asarray(threshold, dtype=F64), a64.ndim)
    ps = channelwise(np.asarray(shift, dtype=F64), a64.ndim)
    ds = channelwise(np.asarray(dist_shift, dtype=F64), a64.ndim)
    k = np.floor(((a64 + ds) * levels + ps) / th)
    return np.clip(k, 0.0, float(levels))


def qcfs(a: np.ndarray, threshold, levels: int, shift=None) -> np.ndarray:
    """T-level staircase: (threshold/levels) * clip(floor((a*levels + shift)/threshold), 0, levels).

    shift defaults to threshold/2, the choice that centers each step on its
    quantization cell.
    """
    th = _param(threshold, "threshold")
    if np.any(np.asarray(th) <= 0):
        raise ValueError("qcfs: threshold must be positive")
    if shift is None:
        shift = th / F32(2)
    a = as_f32(a)
    k = staircase_count(a, th, levels, _param(shift, "shift"))
    return scaled_rate(k, channelwise(th, a.ndim), levels)


def da_qcfs(a: np.ndarray, threshold, levels: int, shift=None, dist_shift=0.0,
            dist_scale=0.0) -> np.ndarray:
    """Distribution-aware staircase.

    Shifts the input by dist_shift before quantization and stretches the
    output amplitude to threshold + dist_scale. Reduces to qcfs when both
    corrections are zero.
    """
    th = _param(threshold, "threshold")
    ds = _param(dist_shift, "dist_shift")
    sc = _param(dist_scale, "dist_scale")
    if np.any(np.asarray(th) <= 0):
        raise ValueError("da_qcfs: threshold must be positive")
    amp = th + sc  # float32 add, correctly rounded
    if np.any(np.asarray(amp) <= 0):
        raise ValueError("da_qcfs: threshold + dist_scale must stay positive")
    if shift is None:
        shift = th / F32(2)
    a = as_f32(a)
    k = staircase_count(a, th, levels, _param(shift, "shift"), ds)
    return scaled_rate(k, channelwise(amp, a.ndim), levels)


def boundary_margin(a, threshold, levels: int, shift, dist_shift=0.0) -> np.ndarray:
    """Distance (in input units) from each element to its nearest staircase jump.

    Exact-equality tests exclude points whose margin is below 1e-6*threshold;
    there the floor in the staircase and the tie rule in the firing predicate
    may legitimately resolve differently under rounding.
    """
    a64 = np.asarray(a, dtype=F64)
    th = channelwise(np.asarray(threshold, dtype=F64), a64.ndim)
    ps = channelwise(np.asarray(shift, dtype=F64), a64.ndim)
    ds = channelwise(np.asarray(dist_shift, dtype=F64), a64.ndim)
    arg = ((a64 + ds) * levels + ps) / th
    frac = arg - np.floor(arg)
    return np.minimum(frac, 1.0 - frac) * th / levels


@dataclass
class ActivationSpec:
    """Tagged activation descriptor attached to a graph's activation layers.

    threshold, shift, dist_shift, dist_scale are scalars or per-channel
    vectors [C]; levels is the staircase resolution (unused by relu and
    clip_relu).
    """

    variant: str
    threshold: object = None
    levels: int = 0
    shift: object = None
    dist_shift: object = None
    dist_scale: object = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown activation variant {self.variant!r}")
        if self.variant != RELU:
            if self.threshold is None:
                raise ValueError(f"{self.variant} requires a threshold")
            self.threshold = _param(self.threshold, "threshold")
            if np.any(np.asarray(self.threshold) <= 0):
                raise ValueError(f"{self.variant}: threshold must be positive")
        if self.variant in (QCFS, DA_QCFS):
            self.levels = int(self.levels)
            if self.levels < 1:
                raise ValueError(f"{self.variant}: levels must be >= 1, got {self.levels}")
            if self.shift is None:
                self.shift = self.threshold / F32(2)
            self.shift = _param(self.shift, "shift")
        if self.variant == DA_QCFS:
            self.dist_shift = _param(
                0.0 if self.dist_shift is None else self.dist_shift, "dist_shift"
            )
            self.dist_scale = _param(
                0.0 if self.dist_scale is None else self.dist_scale, "dist_scale"
            )
            if np.any(np.asarray(self.threshold + self.dist_scale) <= 0):
                raise ValueError("da_qcfs: threshold + dist_scale must stay positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.variant == RELU:
            return relu(x)
        if self.variant == CLIP_RELU:
            return clip_relu(x, self.threshold)
        if self.variant == QCFS:
            return qcfs(x, self.threshold, self.levels, self.shift)
        return da_qcfs(
            x, self.threshold, self.levels, self.shift, self.dist_shift, self.dist_scale
        )

    def copy(self) -> "ActivationSpec":
        def c(v):
            return v.copy() if isinstance(v, np.ndarray) else v

        return ActivationSpec(
            self.variant,
            threshold=c(self.threshold),
            levels=self.levels,
            shift=c(self.shift),
            dist_shift=c(self.dist_shift),
            dist_scale=c(self.dist_scale),
        )


def record_thresholds(graph, batches) -> list:
    """Per-channel running max of pre-activation values at every activation layer.

    batches is an iterable of input arrays. Returns one threshold vector [C]
    per activation layer, clamped below at THRESHOLD_FLOOR; channels that
    never exceed zero get the floor value and a warning.
    """
    from .runtime import ann_forward  # deferred: runtime depends on this module

    maxima = None
    n_batches = 0
    for batch in batches:
        _, preacts = ann_forward(graph, batch, collect="preact")
        n_batches += 1
        per_layer = []
        for p in preacts:
            axes = (0,) + tuple(range(2, p.ndim))
            per_layer.append(np.asarray(p, dtype=F64).max(axis=axes))
        if maxima is None:
            maxima = per_layer
        else:
            maxima = [np.maximum(m, q) for m, q in zip(maxima, per_layer)]
    if n_batches == 0:
        raise ValueError("record_thresholds: empty batch stream")

    out = []
    dead = 0
    for m in maxima:
        dead += int(np.count_nonzero(m <= 0))
        out.append(np.maximum(m, THRESHOLD_FLOOR).astype(F32))
    if dead:
        warnings.warn(
            f"record_thresholds: {dead} channel(s) never exceeded zero; "
            f"threshold clamped to {THRESHOLD_FLOOR}",
            stacklevel=2,
        )
    return out
