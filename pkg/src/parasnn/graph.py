"""Feed-forward network description: typed layers in execution order.

A network is a flat list of layers. Affine layers (linear, conv) carry their
own parameters; activation layers carry an ActivationSpec. Residual skip
connections are expressed as begin/join marker pairs: begin saves the running
tensor under an id, join adds it back. Shape inference walks the list once and
validates conformance, so downstream passes can trust the structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import numeric
from .activations import ActivationSpec
from .neuron import ParallelNeuronParams
from .numeric import as_f32


@dataclass
class LinearLayer:
    weight: np.ndarray  # [Cout, Cin]
    bias: np.ndarray  # [Cout]
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        self.weight = as_f32(self.weight)
        self.bias = as_f32(self.bias)
        if self.weight.ndim != 2:
            raise ValueError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"linear bias shape {self.bias.shape} != ({self.weight.shape[0]},)"
            )

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class Conv2dLayer:
    weight: np.ndarray  # [Cout, Cin, kh, kw]
    bias: np.ndarray  # [Cout]
    stride: int = 1
    padding: int = 0
    kind: str = field(default="conv2d", init=False)

    def __post_init__(self):
        self.weight = as_f32(self.weight)
        self.bias = as_f32(self.bias)
        if self.weight.ndim != 4:
            raise ValueError(f"conv weight must be 4-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"conv bias shape {self.bias.shape} != ({self.weight.shape[0]},)"
            )
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"conv stride/padding out of range: {self.stride}, {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class AvgPool2dLayer:
    k: int
    kind: str = field(default="avgpool2d", init=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"pool window must be >= 1, got {self.k}")


@dataclass
class FlattenLayer:
    kind: str = field(default="flatten", init=False)


@dataclass
class ActivationLayer:
    spec: ActivationSpec
    kind: str = field(default="activation", init=False)


@dataclass
class SpikingLayer:
    """Converted activation: a parallel spiking neuron layer."""

    params: ParallelNeuronParams
    kind: str = field(default="spiking", init=False)


@dataclass
class ResidualBegin:
    id: int
    kind: str = field(default="residual_begin", init=False)


@dataclass
class ResidualJoin:
    id: int
    kind: str = field(default="residual_join", init=False)


Layer = Union[
    LinearLayer,
    Conv2dLayer,
    AvgPool2dLayer,
    FlattenLayer,
    ActivationLayer,
    SpikingLayer,
    ResidualBegin,
    ResidualJoin,
]


def apply_layer(layer, x: np.ndarray) -> np.ndarray:
    """Evaluate one stateless layer on a batched tensor.

    Spiking layers are temporal and rejected here; the runtime drives them.
    """
    if isinstance(layer, LinearLayer):
        return numeric.linear(x, layer.weight, layer.bias)
    if isinstance(layer, Conv2dLayer):
        return numeric.conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding)
    if isinstance(layer, AvgPool2dLayer):
        return numeric.avgpool2d(x, layer.k)
    if isinstance(layer, FlattenLayer):
        return np.ascontiguousarray(x).reshape(x.shape[0], -1)
    if isinstance(layer, ActivationLayer):
        return layer.spec.apply(x)
    if isinstance(layer, SpikingLayer):
        raise ValueError("spiking layers are temporal; evaluate them via the runtime module")
    raise ValueError(f"cannot apply layer of type {type(layer).__name__}")


@dataclass
class LayerGraph:
    """Execution-ordered feed-forward network."""

    layers: list
    input_shape: tuple  # per-sample shape, no batch axis

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.validate()

    def validate(self) -> list:
        """Infer per-layer output shapes; raise on any mismatch.

        Returns the list of per-sample output shapes, one per layer.
        """
        shape = self.input_shape
        shapes = []
        open_spans: dict = {}  # residual id -> saved shape
        span_stack: list = []
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, LinearLayer):
                if len(shape) != 1:
                    raise ValueError(
                        f"layer {idx} (linear): expected flat input, got shape {shape}"
                    )
                if shape[0] != layer.weight.shape[1]:
                    raise ValueError(
                        f"layer {idx} (linear): input dim {shape[0]} != weight in-dim "
                        f"{layer.weight.shape[1]}"
                    )
                shape = (layer.weight.shape[0],)
            elif isinstance(layer, Conv2dLayer):
                if len(shape) != 3:
                    raise ValueError(
                        f"layer {idx} (conv2d): expected CHW input, got shape {shape}"
                    )
                c, h, w = shape
                cout, cin, kh, kw = layer.weight.shape
                if c != cin:
                    raise ValueError(
                        f"layer {idx} (conv2d): input channels {c} != weight channels {cin}"
                    )
                hp, wp = h + 2 * layer.padding, w + 2 * layer.padding
                if kh > hp or kw > wp:
                    raise ValueError(
                        f"layer {idx} (conv2d): kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
                    )
                shape = (
                    cout,
                    (hp - kh) // layer.stride + 1,
                    (wp - kw) // layer.stride + 1,
                )
            elif isinstance(layer, AvgPool2dLayer):
                if len(shape) != 3:
                    raise ValueError(
                        f"layer {idx} (avgpool2d): expected CHW input, got shape {shape}"
                    )
                c, h, w = shape
                if h % layer.k or w % layer.k:
                    raise ValueError(
                        f"layer {idx} (avgpool2d): {h}x{w} not divisible by window {layer.k}"
                    )
                shape = (c, h // layer.k, w // layer.k)
            elif isinstance(layer, FlattenLayer):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, (ActivationLayer, SpikingLayer)):
                pass  # element-wise, shape unchanged
            elif isinstance(layer, ResidualBegin):
                if layer.id in open_spans:
                    raise ValueError(f"layer {idx}: residual id {layer.id} already open")
                open_spans[layer.id] = shape
                span_stack.append(layer.id)
            elif isinstance(layer, ResidualJoin):
                if layer.id not in open_spans:
                    raise ValueError(
                        f"layer {idx}: residual join {layer.id} without matching begin"
                    )
                if not span_stack or span_stack[-1] != layer.id:
                    raise ValueError(
                        f"layer {idx}: residual span {layer.id} does not nest properly"
                    )
                saved = open_spans.pop(layer.id)
                span_stack.pop()
                if saved != shape:
                    raise ValueError(
                        f"layer {idx}: residual join {layer.id} shape {shape} != saved {saved}"
                    )
            else:
                raise ValueError(f"layer {idx}: unknown layer type {type(layer).__name__}")
            shapes.append(shape)
        if open_spans:
            raise ValueError(f"unclosed residual spans: {sorted(open_spans)}")
        return shapes

    @property
    def output_shape(self) -> tuple:
        return self.validate()[-1]

    def activation_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if isinstance(l, ActivationLayer)]

    def channels_at(self, idx: int) -> int:
        """Channel count of the tensor produced by layer idx.

        For feature maps this is the channel axis; for flat tensors the
        feature axis.
        """
        return self.validate()[idx][0]

    def copy(self) -> "LayerGraph":
        """Deep-ish copy: layer objects are re-created, arrays are copied."""
        new_layers = []
        for layer in self.layers:
            if isinstance(layer, LinearLayer):
                new_layers.append(LinearLayer(layer.weight.copy(), layer.bias.copy()))
            elif isinstance(layer, Conv2dLayer):
                new_layers.append(
                    Conv2dLayer(
                        layer.weight.copy(),
                        layer.bias.copy(),
                        stride=layer.stride,
                        padding=layer.padding,
                    )
                )
            elif isinstance(layer, AvgPool2dLayer):
                new_layers.append(AvgPool2dLayer(layer.k))
            elif isinstance(layer, FlattenLayer):
                new_layers.append(FlattenLayer())
            elif isinstance(layer, ActivationLayer):
                new_layers.append(ActivationLayer(layer.spec.copy()))
            elif isinstance(layer, SpikingLayer):
                new_layers.append(
                    SpikingLayer(
                        ParallelNeuronParams(
                            layer.params.steps,
                            layer.params.shift.copy(),
                            layer.params.fire_threshold,
                            layer.params.spike_amplitude,
                        )
                    )
                )
            elif isinstance(layer, ResidualBegin):
                new_layers.append(ResidualBegin(layer.id))
            elif isinstance(layer, ResidualJoin):
                new_layers.append(ResidualJoin(layer.id))
            else:
                raise ValueError(f"unknown layer type {type(layer).__name__}")
        return LayerGraph(new_layers, self.input_shape)
