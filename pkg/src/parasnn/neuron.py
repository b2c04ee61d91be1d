"""Spiking neuron mathematics.

Serial path: classic integrate-and-fire simulation, one membrane update per
time-step. Parallel path: all T firing decisions at once. For converted
layers the firing test at step x (1-based) is

    total_current / (T - x + 1) + shift[x] >= fire_threshold

whose left side is non-decreasing in x whenever the shift vector has the
canonical form shift[x] = s_last / (T - x + 1) with s_last >= 0. Spike trains
are then 0s followed by 1s, so the first firing step can be found by
bisection in O(log T) tests instead of O(T).

All predicates evaluate in float64 from float32 carriers; the scan and
bisection paths share one predicate so their outputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import F32, F64, as_f32, scaled_rate


class SpikeTrain:
    """Binary spike matrix [T, units...], stored densely or as first-fire steps.

    Trains produced by converted (monotone) neurons only record the first
    firing step per unit (sentinel steps+1 when the unit stays silent); the
    dense bit matrix is materialized on demand.
    """

    def __init__(self, steps: int, bits=None, first_fire=None, final_potential=None):
        if steps < 1:
            raise ValueError(f"SpikeTrain: steps must be >= 1, got {steps}")
        if (bits is None) == (first_fire is None):
            raise ValueError("SpikeTrain: exactly one of bits/first_fire required")
        self.steps = int(steps)
        self._bits = bits
        self._first_fire = first_fire
        self.final_potential = final_potential

    @classmethod
    def from_bits(cls, bits, final_potential=None) -> "SpikeTrain":
        bits = np.asarray(bits)
        if bits.ndim < 1:
            raise ValueError("SpikeTrain: bits must have a leading time axis")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("SpikeTrain: bits must be 0/1")
        return cls(bits.shape[0], bits=bits.astype(np.uint8),
                   final_potential=final_potential)

    @classmethod
    def from_first_fire(cls, first_fire, steps: int) -> "SpikeTrain":
        ff = np.asarray(first_fire, dtype=np.int64)
        if ff.size and (ff.min() < 1 or ff.max() > steps + 1):
            raise ValueError(
                f"SpikeTrain: first_fire entries must lie in [1, {steps + 1}]"
            )
        return cls(steps, first_fire=ff)

    @property
    def unit_shape(self) -> tuple:
        if self._bits is not None:
            return self._bits.shape[1:]
        return self._first_fire.shape

    @property
    def bits(self) -> np.ndarray:
        """Dense [T, units...] 0/1 matrix."""
        if self._bits is None:
            t = np.arange(1, self.steps + 1, dtype=np.int64)
            t = t.reshape((self.steps,) + (1,) * self._first_fire.ndim)
            self._bits = (t >= self._first_fire[None]).astype(np.uint8)
        return self._bits

    def counts(self) -> np.ndarray:
        """Spike count per unit, int64."""
        if self._first_fire is not None:
            return np.maximum(self.steps - self._first_fire + 1, 0).astype(np.int64)
        return self._bits.sum(axis=0, dtype=np.int64)

    def first_fire(self) -> np.ndarray:
        """First step (1-based) with a spike; steps+1 when silent."""
        if self._first_fire is None:
            any_fire = self._bits.any(axis=0)
            idx = self._bits.argmax(axis=0) + 1
            self._first_fire = np.where(any_fire, idx, self.steps + 1).astype(np.int64)
        return self._first_fire

    def is_monotone(self) -> bool:
        """True when every column is 0s followed by 1s."""
        if self._first_fire is not None and self._bits is None:
            return True
        return bool((np.diff(self.bits.astype(np.int8), axis=0) >= 0).all())


@dataclass
class ParallelNeuronParams:
    """Converted-layer parameters: steps T, shift vector, and thresholds.

    shift is [T] (shared across units) or [T, C] (per channel); fire_threshold
    and spike_amplitude are scalars or per-channel vectors [C].
    """

    steps: int
    shift: np.ndarray
    fire_threshold: object
    spike_amplitude: object

    def __post_init__(self):
        self.steps = int(self.steps)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        self.shift = as_f32(self.shift)
        if self.shift.ndim not in (1, 2) or self.shift.shape[0] != self.steps:
            raise ValueError(
                f"shift must be [T] or [T,C] with T={self.steps}, got {self.shift.shape}"
            )
        self.fire_threshold = self._scalar_or_channel(self.fire_threshold, "fire_threshold")
        self.spike_amplitude = self._scalar_or_channel(self.spike_amplitude, "spike_amplitude")
        for name, v in (("fire_threshold", self.fire_threshold),
                        ("spike_amplitude", self.spike_amplitude)):
            if np.any(np.asarray(v) <= 0):
                raise ValueError(f"{name} must be positive")
        channels = {v.shape[0] for v in (self.fire_threshold, self.spike_amplitude)
                    if isinstance(v, np.ndarray) and v.ndim == 1}
        if self.shift.ndim == 2:
            channels.add(self.shift.shape[1])
        if len(channels) > 1:
            raise ValueError(f"inconsistent per-channel sizes: {sorted(channels)}")

    @staticmethod
    def _scalar_or_channel(v, name: str):
        arr = np.asarray(v, dtype=F32)
        if arr.ndim > 1:
            raise ValueError(f"{name} must be scalar or 1-D, got shape {arr.shape}")
        return arr if arr.ndim else F32(arr)

    @property
    def channels(self):
        """Per-channel width C, or None when everything is scalar/shared."""
        if self.shift.ndim == 2:
            return self.shift.shape[1]
        for v in (self.fire_threshold, self.spike_amplitude):
            if isinstance(v, np.ndarray) and v.ndim == 1:
                return v.shape[0]
        return None


def conversion_coefficients(steps: int) -> np.ndarray:
    """Per-step charge ratios c[x] = T/(x*(T-x+1)), 1-based x."""
    if steps < 1:
        raise ValueError(f"conversion_coefficients: steps must be >= 1, got {steps}")
    x = np.arange(1, steps + 1, dtype=F64)
    return (steps / (x * (steps - x + 1))).astype(F32)


def conversion_matrix(steps: int) -> np.ndarray:
    """Constant-row charging matrix, row x filled with 1/(T-x+1).

    Row x dotted with the current history yields total_current/(T-x+1): the
    mean-projection of the inputs scaled up step by step. Exists for the
    reference path and tests; the optimized paths exploit the structure
    without materializing it.
    """
    if steps < 1:
        raise ValueError(f"conversion_matrix: steps must be >= 1, got {steps}")
    denom = np.arange(steps, 0, -1, dtype=F64)
    return np.broadcast_to(1.0 / denom[:, None], (steps, steps)).astype(F32)


def shift_vector(threshold, dist_shift, steps: int) -> np.ndarray:
    """Per-step firing offsets b[x] = threshold/(2(T-x+1)) + dist_shift*T/(T-x+1).

    Returns [T] for scalar arguments, [T, C] when either argument is
    per-channel. The last entry is always threshold/2 + dist_shift*T.
    """
    if steps < 1:
        raise ValueError(f"shift_vector: steps must be >= 1, got {steps}")
    th = np.asarray(threshold, dtype=F64)
    ds = np.asarray(dist_shift, dtype=F64)
    if np.any(th <= 0):
        raise ValueError("shift_vector: threshold must be positive")
    denom = np.arange(steps, 0, -1, dtype=F64)  # T-x+1 for x = 1..T
    if th.ndim == 0 and ds.ndim == 0:
        b = th / (2.0 * denom) + ds * steps / denom
    else:
        th, ds = np.broadcast_arrays(np.atleast_1d(th), np.atleast_1d(ds))
        b = th[None, :] / (2.0 * denom[:, None]) + ds[None, :] * steps / denom[:, None]
    return b.astype(F32)


def total_current(currents: np.ndarray) -> np.ndarray:
    """Per-unit sum over the time axis, in float64."""
    return np.asarray(currents, dtype=F64).sum(axis=0)


def _per_unit(v, channel_of):
    """Expand a scalar-or-[C] parameter to align with flat units, as float64."""
    arr = np.asarray(v, dtype=F64)
    if arr.ndim == 0:
        return arr
    if channel_of is None:
        return arr
    return arr[channel_of]


def _fire_at(current_sum64, x, shift64, theta64, steps: int, channel_of=None,
             unit_idx=None):
    """Firing predicate at per-unit steps x (1-based int array or scalar)."""
    denom = (steps - np.asarray(x, dtype=np.int64) + 1).astype(F64)
    if shift64.ndim == 1:
        b = shift64[np.asarray(x) - 1]
    else:
        cols = channel_of if channel_of is not None else np.arange(shift64.shape[1])
        if unit_idx is not None:
            cols = cols[unit_idx]
        b = shift64[np.asarray(x) - 1, cols]
    th = theta64
    if isinstance(th, np.ndarray) and th.ndim == 1 and unit_idx is not None:
        th = th[unit_idx]
    return current_sum64 / denom + b >= th


def fire_scan(currents: np.ndarray, params: ParallelNeuronParams,
              channel_of=None) -> SpikeTrain:
    """Reference firing path: evaluate the predicate at every step.

    currents: [T, U]. channel_of: optional int map unit -> channel column for
    per-channel shift/threshold parameters.
    """
    currents = np.asarray(currents)
    if currents.ndim != 2 or currents.shape[0] != params.steps:
        raise ValueError(
            f"fire_scan: currents must be [T={params.steps}, U], got {currents.shape}"
        )
    return fire_scan_from_sum(total_current(currents), params, channel_of)


def fire_scan_from_sum(current_sum, params: ParallelNeuronParams,
                       channel_of=None) -> SpikeTrain:
    """fire_scan, starting from the per-unit current sums."""
    s64 = np.asarray(current_sum, dtype=F64)
    if s64.ndim != 1:
        raise ValueError(f"fire_scan_from_sum: current_sum must be 1-D, got {s64.shape}")
    steps = params.steps
    denom = np.arange(steps, 0, -1, dtype=F64)
    shift64 = params.shift.astype(F64)
    if shift64.ndim == 1:
        b = shift64[:, None]
    elif channel_of is not None:
        b = shift64[:, channel_of]
    else:
        if shift64.shape[1] != s64.shape[0]:
            raise ValueError(
                f"per-channel shift has {shift64.shape[1]} columns "
                f"but got {s64.shape[0]} units and no channel map"
            )
        b = shift64
    th = _per_unit(params.fire_threshold, channel_of)
    lhs = s64[None, :] / denom[:, None] + b
    bits = (lhs >= th).astype(np.uint8)
    return SpikeTrain.from_bits(bits)


def fire_bisect(current_sum, params: ParallelNeuronParams, channel_of=None,
                count_evals: bool = False):
    """Optimized firing path: bisect for the first firing step.

    One guard test at the last (most permissive) step decides whether the
    unit fires at all; the bisection then needs at most ceil(log2 T) predicate
    evaluations per unit. Returns (first_fire, SpikeTrain) and, when
    count_evals is set, the per-unit count of in-search predicate evaluations
    (the guard is accounted separately as one test per unit).
    """
    s64 = np.asarray(current_sum, dtype=F64)
    if s64.ndim != 1:
        raise ValueError(f"fire_bisect: current_sum must be 1-D, got {s64.shape}")
    steps = params.steps
    n = s64.shape[0]
    shift64 = params.shift.astype(F64)
    th = _per_unit(params.fire_threshold, channel_of)

    ever = _fire_at(s64, np.full(n, steps, dtype=np.int64), shift64, th, steps,
                    channel_of)
    lo = np.ones(n, dtype=np.int64)
    hi = np.full(n, steps, dtype=np.int64)
    evals = np.zeros(n, dtype=np.int64)
    unit_idx = np.arange(n)

    active = ever & (lo < hi)
    while active.any():
        idx = unit_idx[active]
        mid = (lo[idx] + hi[idx]) // 2
        fired = _fire_at(s64[idx], mid, shift64, th, steps, channel_of, unit_idx=idx)
        evals[idx] += 1
        hi[idx] = np.where(fired, mid, hi[idx])
        lo[idx] = np.where(fired, lo[idx], mid + 1)
        active = ever & (lo < hi)

    first = np.where(ever, lo, steps + 1).astype(np.int64)
    train = SpikeTrain.from_first_fire(first, steps)
    if count_evals:
        return first, train, evals
    return first, train


def serial_if_run(currents: np.ndarray, threshold, leak: float = 1.0,
                  v0=0.0) -> SpikeTrain:
    """Step-by-step (leaky) integrate-and-fire with soft reset.

    Per step: v_pre = leak*v + I[t]; spike when v_pre >= threshold (ties
    fire); v -= threshold on spike. threshold and v0 broadcast against the
    unit axes. The returned train carries final_potential.
    """
    currents = np.asarray(currents, dtype=F64)
    if currents.ndim < 1:
        raise ValueError("serial_if_run: currents must have a leading time axis")
    th = np.asarray(threshold, dtype=F64)
    if np.any(th <= 0):
        raise ValueError("serial_if_run: threshold must be positive")
    if not (0.0 <= leak <= 1.0):
        raise ValueError(f"serial_if_run: leak must lie in [0, 1], got {leak}")
    steps = currents.shape[0]
    unit_shape = currents.shape[1:]
    v = np.broadcast_to(np.asarray(v0, dtype=F64), unit_shape).copy()
    bits = np.empty((steps,) + unit_shape, dtype=np.uint8)
    for t in range(steps):
        v_pre = leak * v + currents[t]
        s = v_pre >= th
        bits[t] = s
        v = v_pre - s * th
    return SpikeTrain.from_bits(bits, final_potential=v)


def parallel_lif_run(currents: np.ndarray, leak: float, threshold) -> SpikeTrain:
    """All-steps membrane evaluation through the dense leak matrix.

    Potential at step t is sum_i leak^(t-i) * I[i] for i <= t; spikes wherever
    it reaches threshold. No reset between steps: this is the one-shot
    parallel form, not a simulation of the serial reset dynamics.
    """
    currents = np.asarray(currents, dtype=F64)
    th = np.asarray(threshold, dtype=F64)
    if np.any(th <= 0):
        raise ValueError("parallel_lif_run: threshold must be positive")
    if not (0.0 <= leak <= 1.0):
        raise ValueError(f"parallel_lif_run: leak must lie in [0, 1], got {leak}")
    steps = currents.shape[0]
    t = np.arange(steps, dtype=F64)
    expo = t[:, None] - t[None, :]
    lam = np.zeros((steps, steps), dtype=F64)
    lower = expo >= 0
    lam[lower] = np.float_power(leak, expo[lower])
    v_pre = np.tensordot(lam, currents, axes=(1, 0))
    return SpikeTrain.from_bits((v_pre >= th).astype(np.uint8))


def rate_from_spikes(train: SpikeTrain, spike_amplitude) -> np.ndarray:
    """Average firing rate: count * amplitude / T, per unit."""
    amp = np.asarray(spike_amplitude, dtype=F32)
    return scaled_rate(train.counts(), amp, train.steps)
