"""End-to-end inference: ANN forward, parallel-SNN forward, serial-SNN oracle.

The parallel path never simulates time. Input is encoded as a constant
current, so a layer's total input over T steps is T times its mean-rate
carrier; each spiking layer turns that sum into a first-firing step by
bisection, and the resulting rate feeds the next layer through a single
synaptic pass. The serial path really runs T sweeps of the whole stack with
membrane state, which is what makes it the wall-time baseline.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .activations import DA_QCFS, QCFS, boundary_margin, channelwise
from .convert import QCFS_EQ_CASE, ConvertedNetwork, convert, init_da_params
from .graph import (
    ActivationLayer,
    LayerGraph,
    ResidualBegin,
    ResidualJoin,
    SpikingLayer,
    apply_layer,
)
from .neuron import fire_bisect, fire_scan_from_sum
from .numeric import F32, F64, as_f32, scaled_rate

PARALLEL_BACKENDS = ("fast", "full")


@dataclass
class InferenceReport:
    logits: np.ndarray
    top1: np.ndarray
    wall_time: float
    firing_sparsity: float
    per_layer_rates: Optional[list] = None

    def __post_init__(self):
        if not np.array_equal(self.top1, np.argmax(self.logits, axis=1)):
            raise ValueError("top1 must be the row-wise argmax of logits")
        if not (0.0 <= self.firing_sparsity <= 1.0):
            raise ValueError(f"firing_sparsity out of [0, 1]: {self.firing_sparsity}")


def _report(logits, wall_time, firing_sparsity, per_layer_rates=None) -> InferenceReport:
    return InferenceReport(
        logits=logits,
        top1=np.argmax(logits, axis=1),
        wall_time=float(wall_time),
        firing_sparsity=float(firing_sparsity),
        per_layer_rates=per_layer_rates,
    )


def ann_forward(graph: LayerGraph, x, collect: Optional[str] = None):
    """Layer-by-layer evaluation of an (unconverted) network.

    collect: None, "preact" (inputs of activation layers), or "postact"
    (their outputs); when set, returns (logits, collected_list).
    """
    if collect not in (None, "preact", "postact"):
        raise ValueError(f"unknown collect mode {collect!r}")
    r = as_f32(x)
    if r.ndim != len(graph.input_shape) + 1:
        raise ValueError(
            f"expected batched input with shape [N, {graph.input_shape}], got {r.shape}"
        )
    stash: dict = {}
    collected = []
    for layer in graph.layers:
        if isinstance(layer, ActivationLayer):
            if collect == "preact":
                collected.append(r)
            r = layer.spec.apply(r)
            if collect == "postact":
                collected.append(r)
        elif isinstance(layer, ResidualBegin):
            stash[layer.id] = r
        elif isinstance(layer, ResidualJoin):
            r = r + stash.pop(layer.id)
        elif isinstance(layer, SpikingLayer):
            raise ValueError("graph contains spiking layers; use snn_parallel_forward")
        else:
            r = apply_layer(layer, r)
    if collect is None:
        return r
    return r, collected


def off_boundary_mask(graph: LayerGraph, x, margin_scale: float = 1e-6) -> np.ndarray:
    """Samples whose every staircase pre-activation clears the jump points.

    A sample is kept when, at every staircase activation, all its units sit
    farther than margin_scale*threshold from the nearest quantization jump.
    Exact ANN/SNN equality holds on kept samples; on the excluded sliver the
    floor rule and the firing tie rule may round apart.
    """
    x = as_f32(x)
    _, preacts = ann_forward(graph, x, collect="preact")
    keep = np.ones(x.shape[0], dtype=bool)
    specs = [graph.layers[i].spec for i in graph.activation_indices()]
    for pre, spec in zip(preacts, specs):
        if spec.variant not in (QCFS, DA_QCFS):
            continue
        dist_shift = spec.dist_shift if spec.variant == DA_QCFS else 0.0
        d = boundary_margin(pre, spec.threshold, spec.levels, spec.shift, dist_shift)
        limit = channelwise(np.asarray(spec.threshold, dtype=F64), pre.ndim) * margin_scale
        near = (d <= limit).reshape(x.shape[0], -1).any(axis=1)
        keep &= ~near
    return keep


def _channel_map(shape: tuple) -> np.ndarray:
    """Flat unit -> channel index for a batched tensor [N, C, ...]."""
    n = shape[0]
    c = shape[1] if len(shape) > 1 else 1
    ids = np.arange(c, dtype=np.int64).reshape((1, c) + (1,) * (len(shape) - 2))
    return np.broadcast_to(ids, shape).ravel()


def snn_parallel_forward(net: ConvertedNetwork, x, steps: Optional[int] = None,
                         backend: str = "fast", collect_rates: bool = False,
                         check_sorting: bool = False) -> InferenceReport:
    """One-pass parallel inference over a converted network.

    backend "fast" bisects for the first firing step; "full" evaluates the
    firing test at every step. Both consume identical per-unit current sums,
    so their outputs are bit-identical. Logits are the time-averaged output
    currents of the final layer.
    """
    if steps is not None and steps != net.steps:
        raise ValueError(f"requested steps {steps} != converted network steps {net.steps}")
    if backend not in PARALLEL_BACKENDS:
        raise ValueError(f"backend must be one of {PARALLEL_BACKENDS}, got {backend!r}")
    steps = net.steps
    t0 = time.perf_counter()
    r = as_f32(x)
    stash: dict = {}
    spike_total = 0
    unit_steps = 0
    rates = [] if collect_rates else None
    for layer in net.graph.layers:
        if isinstance(layer, SpikingLayer):
            p = layer.params
            shape = r.shape
            flat = r.ravel()
            channel_of = _channel_map(shape) if p.channels is not None else None
            current_sum = np.asarray(flat, dtype=F64) * steps
            if backend == "fast":
                _, train = fire_bisect(current_sum, p, channel_of)
            else:
                train = fire_scan_from_sum(current_sum, p, channel_of)
                if check_sorting and not train.is_monotone():
                    raise AssertionError("spike train violates the sorting property")
            counts = train.counts().reshape(shape)
            amp = channelwise(np.asarray(p.spike_amplitude), r.ndim)
            r = scaled_rate(counts, amp, steps)
            spike_total += int(counts.sum())
            unit_steps += flat.size * steps
            if collect_rates:
                rates.append(float(counts.mean() / steps))
        elif isinstance(layer, ResidualBegin):
            stash[layer.id] = r
        elif isinstance(layer, ResidualJoin):
            r = r + stash.pop(layer.id)
        elif isinstance(layer, ActivationLayer):
            raise ValueError("converted network still contains activation layers")
        else:
            r = apply_layer(layer, r)
    wall = time.perf_counter() - t0
    sparsity = spike_total / unit_steps if unit_steps else 0.0
    return _report(r, wall, sparsity, rates)


def snn_serial_forward(net: ConvertedNetwork, x, steps: Optional[int] = None,
                       collect_rates: bool = False) -> InferenceReport:
    """Step-by-step integrate-and-fire simulation of a converted network.

    Every time-step pushes a current through the full layer stack; spiking
    layers hold membrane state across steps, starting from the last shift
    entry (threshold/2 plus the folded distribution offset). Logits are the
    time-averaged outputs. Linear in T by construction: the baseline for the
    speedup measurements.
    """
    if steps is not None and steps != net.steps:
        raise ValueError(f"requested steps {steps} != converted network steps {net.steps}")
    steps = net.steps
    t0 = time.perf_counter()
    x = as_f32(x)
    membranes: dict = {}
    spike_counts: dict = {}
    logits_acc = None
    spike_total = 0
    unit_steps = 0
    for t in range(steps):
        cur = x
        stash: dict = {}
        for idx, layer in enumerate(net.graph.layers):
            if isinstance(layer, SpikingLayer):
                p = layer.params
                th = channelwise(np.asarray(p.fire_threshold, dtype=F64), cur.ndim)
                if idx not in membranes:
                    v0 = p.shift[-1]  # threshold/2 + dist_shift*T by construction
                    v0 = channelwise(np.asarray(v0, dtype=F64), cur.ndim)
                    membranes[idx] = np.broadcast_to(v0, cur.shape).astype(F64).copy()
                    spike_counts[idx] = 0
                v_pre = membranes[idx] + np.asarray(cur, dtype=F64)
                s = v_pre >= th
                membranes[idx] = v_pre - s * th
                amp = channelwise(np.asarray(p.spike_amplitude), cur.ndim)
                cur = (s.astype(F32) * amp).astype(F32)
                n_spikes = int(s.sum())
                spike_total += n_spikes
                spike_counts[idx] += n_spikes
                unit_steps += s.size
            elif isinstance(layer, ResidualBegin):
                stash[layer.id] = cur
            elif isinstance(layer, ResidualJoin):
                cur = cur + stash.pop(layer.id)
            elif isinstance(layer, ActivationLayer):
                raise ValueError("converted network still contains activation layers")
            else:
                cur = apply_layer(layer, cur)
        acc = np.asarray(cur, dtype=F64)
        logits_acc = acc if logits_acc is None else logits_acc + acc
    logits = (logits_acc / steps).astype(F32)
    wall = time.perf_counter() - t0
    sparsity = spike_total / unit_steps if unit_steps else 0.0
    rates = None
    if collect_rates:
        rates = []
        for idx, layer in enumerate(net.graph.layers):
            if isinstance(layer, SpikingLayer):
                rates.append(spike_counts[idx] / (membranes[idx].size * steps))
    return _report(logits, wall, sparsity, rates)


def _predict(model, x, backend: str):
    if isinstance(model, LayerGraph):
        return np.argmax(ann_forward(model, x), axis=1)
    if isinstance(model, ConvertedNetwork):
        if backend == "serial":
            return snn_serial_forward(model, x).top1
        flavor = {"parallel-fast": "fast", "parallel-full": "full",
                  "fast": "fast", "full": "full"}.get(backend)
        if flavor is None:
            raise ValueError(f"unknown backend {backend!r}")
        return snn_parallel_forward(model, x, backend=flavor).top1
    raise ValueError(f"cannot evaluate object of type {type(model).__name__}")


def evaluate(model, x, labels, other=None, backend: str = "fast") -> dict:
    """Top-1 accuracy; with a second model, also the prediction agreement rate."""
    x = as_f32(x)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise ValueError("evaluate: empty dataset")
    if labels.shape[0] != x.shape[0]:
        raise ValueError(f"evaluate: {x.shape[0]} inputs vs {labels.shape[0]} labels")
    pred = _predict(model, x, backend)
    out = {
        "n": int(x.shape[0]),
        "top1_accuracy": float((pred == labels).mean()),
    }
    if other is not None:
        pred_other = _predict(other, x, backend)
        out["other_top1_accuracy"] = float((pred_other == labels).mean())
        out["agreement"] = float((pred == pred_other).mean())
    return out


def _median_time(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench(source_graph: LayerGraph, x, steps_list, repeats: int = 7,
          warmup: int = 3, threads: int = 1) -> list:
    """Serial vs parallel wall time over a list of step counts.

    The source network (QCFS or ClipReLU activations with shared per-layer
    thresholds) is converted once per T; both paths then run the same inputs.
    Times are medians over `repeats` runs after `warmup` discarded runs,
    with BLAS pools capped at `threads`.
    """
    x = as_f32(x)
    rows = []
    with threadpool_limits(limits=threads):
        for steps in steps_list:
            steps = int(steps)
            da = init_da_params(source_graph, steps, per_channel=False)
            net = convert(da, steps, QCFS_EQ_CASE)
            serial = _median_time(lambda: snn_serial_forward(net, x), repeats, warmup)
            parallel = _median_time(
                lambda: snn_parallel_forward(net, x, backend="fast"), repeats, warmup
            )
            rows.append({
                "T": steps,
                "serial_time": serial,
                "parallel_time": parallel,
                "ratio": serial / parallel,
                "batch": int(x.shape[0]),
                "threads": int(threads),
                "repeats": int(repeats),
            })
    return rows


def emit_records(records, path: Optional[str] = None):
    """Write dicts as line-delimited JSON with stable field order."""
    lines = [json.dumps(r) for r in records]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
