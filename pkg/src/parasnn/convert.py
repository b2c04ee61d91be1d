"""ANN-to-SNN conversion: initialization, calibration, and the layer mapping.

Three conversion cases, differing in what the source network provides:

  qcfs-eq   source staircase resolution equals the inference steps T;
            the mapping is exact and needs no calibration.
  qcfs-neq  staircase resolution differs from T; per-channel corrections
            are calibrated against the source activations.
  relu      plain ReLU source; per-channel clip thresholds are recorded
            first, then calibration runs as above.

Calibration is a greedy layer-by-layer sweep over two synchronized forward
passes: the reference network (original activations) and the adjusted one
(distribution-aware staircases). Per activation layer, the channel-mean input
mismatch updates the input shift, then the channel-mean output mismatch
updates the amplitude correction, both through a momentum recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import CLIP_RELU, DA_QCFS, QCFS, RELU, ActivationSpec, record_thresholds
from .graph import (
    ActivationLayer,
    LayerGraph,
    ResidualBegin,
    ResidualJoin,
    SpikingLayer,
    apply_layer,
)
from .neuron import ParallelNeuronParams, shift_vector
from .numeric import F32, F64

QCFS_EQ_CASE = "qcfs-eq"
QCFS_NEQ_CASE = "qcfs-neq"
RELU_CASE = "relu"
CONVERSION_CASES = (QCFS_EQ_CASE, QCFS_NEQ_CASE, RELU_CASE)


@dataclass
class CalibrationConfig:
    alpha: float = 0.99
    epochs: int = 1
    batch_size: int = 64
    conversion_case: str = QCFS_EQ_CASE

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.conversion_case not in CONVERSION_CASES:
            raise ValueError(
                f"conversion_case must be one of {CONVERSION_CASES}, "
                f"got {self.conversion_case!r}"
            )


def momentum_update(state, error, alpha: float):
    """One calibration step: alpha*state + (1-alpha)*error, in float64.

    From zero state, n updates with constant error e reach e*(1 - alpha^n).
    """
    return np.asarray(state, dtype=F64) * alpha + (1.0 - alpha) * np.asarray(error, dtype=F64)


@dataclass
class ConvertedNetwork:
    """Spiking network produced by conversion: activations became SpikingLayers."""

    graph: LayerGraph
    steps: int
    conversion_case: str

    def __post_init__(self):
        if self.conversion_case not in CONVERSION_CASES:
            raise ValueError(f"unknown conversion case {self.conversion_case!r}")
        self.validate_shapes()

    def spiking_layers(self) -> list:
        return [l for l in self.graph.layers if isinstance(l, SpikingLayer)]

    def validate_shapes(self):
        """Assert the per-case parameter shape regime for every spiking layer.

        qcfs-eq: shift [T], both thresholds scalar. qcfs-neq: shift [T,C],
        fire threshold scalar, amplitude [C]. relu: shift [T,C], both
        thresholds [C].
        """
        for i, layer in enumerate(self.graph.layers):
            if not isinstance(layer, SpikingLayer):
                continue
            p = layer.params
            if p.steps != self.steps:
                raise ValueError(f"layer {i}: steps {p.steps} != network steps {self.steps}")
            pre_dim = np.asarray(p.fire_threshold).ndim
            post_dim = np.asarray(p.spike_amplitude).ndim
            if self.conversion_case == QCFS_EQ_CASE:
                ok = p.shift.ndim == 1 and pre_dim == 0 and post_dim == 0
            elif self.conversion_case == QCFS_NEQ_CASE:
                ok = p.shift.ndim == 2 and pre_dim == 0 and post_dim == 1
            else:
                ok = p.shift.ndim == 2 and pre_dim == 1 and post_dim == 1
            if not ok:
                raise ValueError(
                    f"layer {i}: parameter shapes (shift {p.shift.shape}, "
                    f"fire_threshold ndim {pre_dim}, spike_amplitude ndim {post_dim}) "
                    f"violate the {self.conversion_case} regime"
                )


def init_da_params(graph: LayerGraph, steps: int, per_channel: bool = True) -> LayerGraph:
    """Replace every QCFS/ClipReLU activation by a distribution-aware staircase.

    Thresholds are copied; the staircase resolution is set to the actual
    inference steps; both corrections start at zero, as per-channel vectors
    when per_channel is set, else scalars.
    """
    if steps < 1:
        raise ValueError(f"init_da_params: steps must be >= 1, got {steps}")
    out = graph.copy()
    shapes = out.validate()
    for idx, layer in enumerate(out.layers):
        if not isinstance(layer, ActivationLayer):
            continue
        spec = layer.spec
        if spec.variant not in (QCFS, CLIP_RELU):
            raise ValueError(
                f"layer {idx}: cannot initialize from {spec.variant!r} "
                f"(expected qcfs or clip_relu)"
            )
        theta = spec.threshold
        shift = spec.shift if spec.variant == QCFS else None
        if per_channel:
            zeros = np.zeros(shapes[idx][0], dtype=F32)
        else:
            zeros = F32(0)
        out.layers[idx] = ActivationLayer(
            ActivationSpec(
                DA_QCFS,
                threshold=theta.copy() if isinstance(theta, np.ndarray) else theta,
                levels=steps,
                shift=shift,
                dist_shift=zeros,
                dist_scale=zeros.copy() if isinstance(zeros, np.ndarray) else zeros,
            )
        )
    return out


def _check_paired(ref_graph: LayerGraph, da_graph: LayerGraph):
    if len(ref_graph.layers) != len(da_graph.layers):
        raise ValueError(
            f"graphs differ in length: {len(ref_graph.layers)} vs {len(da_graph.layers)}"
        )
    for idx, (lr, ld) in enumerate(zip(ref_graph.layers, da_graph.layers)):
        if lr.kind != ld.kind:
            raise ValueError(f"layer {idx}: kind mismatch {lr.kind} vs {ld.kind}")
        if isinstance(lr, ActivationLayer):
            if lr.spec.variant not in (QCFS, CLIP_RELU):
                raise ValueError(
                    f"layer {idx}: reference activation must be qcfs or clip_relu, "
                    f"got {lr.spec.variant!r}"
                )
            if ld.spec.variant != DA_QCFS:
                raise ValueError(
                    f"layer {idx}: adjusted activation must be da_qcfs, "
                    f"got {ld.spec.variant!r}"
                )


def _dual_sweep(ref_graph: LayerGraph, da_graph: LayerGraph, x, on_activation):
    """Run both graphs on one batch, calling on_activation at each activation.

    on_activation(act_idx, pre_ref, pre_da, spec_ref, spec_da) must return the
    two post-activation tensors. Residual branches carry both passes.
    """
    r_ref = r_da = np.asarray(x, dtype=F32)
    stash: dict = {}
    act_idx = 0
    for lr, ld in zip(ref_graph.layers, da_graph.layers):
        if isinstance(lr, ActivationLayer):
            r_ref, r_da = on_activation(act_idx, r_ref, r_da, lr.spec, ld.spec)
            act_idx += 1
        elif isinstance(lr, ResidualBegin):
            stash[lr.id] = (r_ref, r_da)
        elif isinstance(lr, ResidualJoin):
            s_ref, s_da = stash.pop(lr.id)
            r_ref = r_ref + s_ref
            r_da = r_da + s_da
        else:
            r_ref = apply_layer(lr, r_ref)
            r_da = apply_layer(ld, r_da)
    return r_ref, r_da


def _mean64(x) -> np.ndarray:
    """Per-channel mean over batch and spatial axes, kept in float64."""
    x = np.asarray(x, dtype=F64)
    axes = (0,) + tuple(range(2, x.ndim))
    return x.mean(axis=axes)


def calibrate(da_graph: LayerGraph, ref_graph: LayerGraph, batches,
              config: CalibrationConfig) -> LayerGraph:
    """Greedy layer-wise fit of the distribution-aware corrections.

    Per batch and activation layer: the channel-mean pre-activation mismatch
    updates dist_shift (taking effect immediately for this layer's output),
    then the channel-mean output mismatch updates dist_scale. State is held
    in float64 across updates and written back to the float32 specs.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("calibrate: no calibration batches")
    out = da_graph.copy()
    _check_paired(ref_graph, out)
    act_layers = [l for l in out.layers if isinstance(l, ActivationLayer)]
    psi = [np.asarray(l.spec.dist_shift, dtype=F64) for l in act_layers]
    phi = [np.asarray(l.spec.dist_scale, dtype=F64) for l in act_layers]
    alpha = config.alpha

    def update(act_idx, pre_ref, pre_da, spec_ref, spec_da):
        e_pre = _mean64(pre_ref) - _mean64(pre_da)
        psi[act_idx] = momentum_update(psi[act_idx], e_pre, alpha)
        spec_da.dist_shift = psi[act_idx].astype(F32)
        out_ref = spec_ref.apply(pre_ref)
        out_da = spec_da.apply(pre_da)
        e_post = _mean64(out_ref) - _mean64(out_da)
        phi[act_idx] = momentum_update(phi[act_idx], e_post, alpha)
        spec_da.dist_scale = phi[act_idx].astype(F32)
        return out_ref, out_da

    for _ in range(config.epochs):
        for batch in batches:
            _dual_sweep(ref_graph, out, batch, update)
    return out


def measure_output_errors(da_graph: LayerGraph, ref_graph: LayerGraph, batches) -> np.ndarray:
    """Mean absolute systematic output mismatch per activation layer.

    For each layer, channel-mean output differences are averaged over all
    batches, then reduced by mean absolute value over channels. No state is
    modified. Returns one value per activation layer.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("measure_output_errors: no batches")
    _check_paired(ref_graph, da_graph)
    n_act = len(da_graph.activation_indices())
    sums = [None] * n_act

    def record(act_idx, pre_ref, pre_da, spec_ref, spec_da):
        out_ref = spec_ref.apply(pre_ref)
        out_da = spec_da.apply(pre_da)
        e = _mean64(out_ref) - _mean64(out_da)
        sums[act_idx] = e if sums[act_idx] is None else sums[act_idx] + e
        return out_ref, out_da

    for batch in batches:
        _dual_sweep(ref_graph, da_graph, batch, record)
    return np.array([np.mean(np.abs(s / len(batches))) for s in sums])


def convert(da_graph: LayerGraph, steps: int, conversion_case: str) -> ConvertedNetwork:
    """Map a calibrated network onto parallel spiking layers.

    Per activation: shift vector built from (threshold, dist_shift), firing
    threshold = threshold, spike amplitude = threshold + dist_scale; weights
    carried over untouched. The staircase shift must be threshold/2 (the
    centered-quantization default): the shift-vector construction reproduces
    the staircase exactly only for that value.
    """
    if conversion_case not in CONVERSION_CASES:
        raise ValueError(f"unknown conversion case {conversion_case!r}")
    out = da_graph.copy()
    for idx, layer in enumerate(out.layers):
        if not isinstance(layer, ActivationLayer):
            continue
        spec = layer.spec
        if spec.variant != DA_QCFS:
            raise ValueError(f"layer {idx}: expected da_qcfs activation, got {spec.variant!r}")
        if spec.levels != steps:
            raise ValueError(
                f"layer {idx}: staircase resolution {spec.levels} != inference steps "
                f"{steps}; re-initialize with the target steps"
            )
        if not np.array_equal(np.asarray(spec.shift), np.asarray(spec.threshold) / F32(2)):
            raise ValueError(
                f"layer {idx}: staircase shift must equal threshold/2 for exact conversion"
            )
        amplitude = spec.threshold + spec.dist_scale
        if np.any(np.asarray(amplitude) <= 0):
            raise ValueError(
                f"layer {idx}: threshold + dist_scale must stay positive, "
                f"got min {np.min(np.asarray(amplitude))}"
            )
        b = shift_vector(spec.threshold, spec.dist_shift, steps)
        out.layers[idx] = SpikingLayer(
            ParallelNeuronParams(steps, b, spec.threshold, amplitude)
        )
    return ConvertedNetwork(out, steps, conversion_case)


def to_clip_relu(relu_graph: LayerGraph, batches) -> LayerGraph:
    """Record per-channel maxima and swap every ReLU for ClipReLU at that ceiling.

    Outputs on the recording data are unchanged: the clip never binds below
    the observed maximum.
    """
    thresholds = record_thresholds(relu_graph, batches)
    out = relu_graph.copy()
    act = 0
    for idx, layer in enumerate(out.layers):
        if not isinstance(layer, ActivationLayer):
            continue
        if layer.spec.variant != RELU:
            raise ValueError(f"layer {idx}: expected relu, got {layer.spec.variant!r}")
        out.layers[idx] = ActivationLayer(
            ActivationSpec(CLIP_RELU, threshold=thresholds[act])
        )
        act += 1
    return out


def training_free_pipeline(relu_graph: LayerGraph, batches, steps: int,
                           config: CalibrationConfig) -> ConvertedNetwork:
    """ReLU network to spiking network without retraining.

    Records clip ceilings, initializes per-channel corrections, calibrates
    against the clipped reference, and converts.
    """
    batches = list(batches)
    clip_graph = to_clip_relu(relu_graph, batches)
    da = init_da_params(clip_graph, steps, per_channel=True)
    da = calibrate(da, clip_graph, batches, config)
    return convert(da, steps, RELU_CASE)


def convert_pipeline(graph: LayerGraph, batches, steps: int,
                     config: CalibrationConfig) -> ConvertedNetwork:
    """Dispatch to the right conversion flow for config.conversion_case."""
    case = config.conversion_case
    acts = [graph.layers[i].spec for i in graph.activation_indices()]
    if case == RELU_CASE:
        if any(s.variant != RELU for s in acts):
            raise ValueError("relu case requires a pure-ReLU source network")
        return training_free_pipeline(graph, batches, steps, config)
    if any(s.variant != QCFS for s in acts):
        raise ValueError(f"{case} requires a QCFS source network")
    if case == QCFS_EQ_CASE:
        if any(s.levels != steps for s in acts):
            raise ValueError(
                "qcfs-eq requires the source staircase resolution to equal the "
                "inference steps; use qcfs-neq otherwise"
            )
        da = init_da_params(graph, steps, per_channel=False)
        return convert(da, steps, QCFS_EQ_CASE)
    da = init_da_params(graph, steps, per_channel=True)
    da = calibrate(da, graph, list(batches), config)
    return convert(da, steps, QCFS_NEQ_CASE)
