"""Layer specs and the flat-parameter model container.

Parameters of every layer live in one flat float32 vector. Within a
parameterized layer the block is laid out neuron-major: for each output
unit (dense) or output channel (conv2d) its incoming weights come first,
followed by its bias. Each neuron therefore owns one contiguous index
range, which is what localization masks operate on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DimensionError

LAYER_KINDS = ("dense", "conv2d", "relu", "flatten")
INIT_DESCRIPTION = "kaiming_uniform_fan_in(bound=sqrt(6/fan_in)); bias=0"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    For ``dense`` layers ``in_features``/``out_features`` are unit counts;
    for ``conv2d`` they are input/output channel counts and
    ``kernel_size``/``padding`` describe a stride-1 square convolution.
    """

    kind: str
    in_features: int = 0
    out_features: int = 0
    kernel_size: int = 0
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    @property
    def parameterized(self) -> bool:
        return self.kind in ("dense", "conv2d")

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_features
        if self.kind == "conv2d":
            return self.in_features * self.kernel_size**2
        return 0

    @property
    def group_size(self) -> int:
        """Parameters owned by one output neuron/channel."""
        return self.fan_in + int(self.has_bias) if self.parameterized else 0

    @property
    def num_groups(self) -> int:
        return self.out_features if self.parameterized else 0

    @property
    def param_count(self) -> int:
        return self.num_groups * self.group_size

    def output_shape(self, shape: tuple) -> tuple:
        if self.kind == "dense":
            if len(shape) != 1 or shape[0] != self.in_features:
                raise DimensionError(f"dense layer expects ({self.in_features},), got {shape}")
            return (self.out_features,)
        if self.kind == "conv2d":
            if len(shape) != 3 or shape[0] != self.in_features:
                raise DimensionError(
                    f"conv2d layer expects ({self.in_features}, H, W), got {shape}"
                )
            h = shape[1] + 2 * self.padding - self.kernel_size + 1
            w = shape[2] + 2 * self.padding - self.kernel_size + 1
            if h < 1 or w < 1:
                raise DimensionError(f"kernel {self.kernel_size} too large for input {shape}")
            return (self.out_features, h, w)
        if self.kind == "flatten":
            return (int(np.prod(shape)),)
        return tuple(shape)

    def to_dict(self) -> dict:
        return asdict(self)


class Model:
    """Sequential network with a flat, addressable parameter store."""

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int], params=None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise DimensionError(f"network output must be a vector, got shape {shape}")
        self.num_classes = shape[0]

        self.layer_offsets = []
        self.neuron_table = []
        start = 0
        for layer in self.layers:
            stop = start + layer.param_count
            self.layer_offsets.append((start, stop))
            size = layer.group_size
            self.neuron_table.append(
                [(start + i * size, start + (i + 1) * size) for i in range(layer.num_groups)]
            )
            start = stop
        self.p = start
        param_layers = [i for i, layer in enumerate(self.layers) if layer.parameterized]
        if not param_layers:
            raise ConfigError("network has no parameterized layers")
        self.param_layer_ids = tuple(param_layers)
        self.classifier_layer_id = param_layers[-1]

        if params is None:
            params = np.zeros(self.p, dtype=np.float32)
        params = np.asarray(params, dtype=np.float32)
        if params.shape != (self.p,):
            raise DimensionError(f"expected {self.p} parameters, got {params.shape}")
        self.params = params.copy()

    def copy(self) -> "Model":
        return Model(self.layers, self.input_shape, self.params)

    def layer_block(self, layer_id: int, params=None) -> np.ndarray:
        """View of one layer's parameters as (out_groups, group_size)."""
        params = self.params if params is None else params
        start, stop = self.layer_offsets[layer_id]
        layer = self.layers[layer_id]
        return params[start:stop].reshape(layer.num_groups, layer.group_size)

    def layer_ids(self) -> np.ndarray:
        """Layer index of every parameter."""
        out = np.empty(self.p, dtype=np.int64)
        for i, (start, stop) in enumerate(self.layer_offsets):
            out[start:stop] = i
        return out

    def neurons(self):
        """Yield ``(layer_id, neuron_id, start, stop)`` for every neuron group."""
        for layer_id, groups in enumerate(self.neuron_table):
            for neuron_id, (start, stop) in enumerate(groups):
                yield layer_id, neuron_id, start, stop

    def classifier_bits(self) -> np.ndarray:
        bits = np.zeros(self.p, dtype=bool)
        start, stop = self.layer_offsets[self.classifier_layer_id]
        bits[start:stop] = True
        return bits

    def architecture(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    def __repr__(self):
        kinds = ",".join(layer.kind for layer in self.layers)
        return f"Model(input={self.input_shape}, layers=[{kinds}], p={self.p})"


def init_params(model: Model, rng: np.random.Generator) -> np.ndarray:
    """Draw a fresh parameter vector: Kaiming-uniform weights, zero biases."""
    out = np.zeros(model.p, dtype=np.float32)
    for layer_id in model.param_layer_ids:
        layer = model.layers[layer_id]
        bound = math.sqrt(6.0 / layer.fan_in)
        block = model.layer_block(layer_id, out)
        block[:, : layer.fan_in] = rng.uniform(
            -bound, bound, size=(layer.num_groups, layer.fan_in)
        )
    return out


def build_model(architecture: dict | Sequence, input_shape=None, seed: int = 0) -> Model:
    """Build and initialize a model.

    ``architecture`` is either a dict with ``input_shape`` and ``layers`` or a
    plain list of layer dicts (then ``input_shape`` is required). Layer dicts
    may omit ``in_features``; it is inferred from the running shape.
    Accepted keys: ``kind``, ``out_features`` (dense), ``out_channels``,
    ``kernel_size``, ``padding`` (conv2d), ``has_bias``.
    """
    if isinstance(architecture, dict):
        layer_dicts = architecture["layers"]
        input_shape = architecture.get("input_shape", input_shape)
    else:
        layer_dicts = architecture
    if input_shape is None:
        raise ConfigError("input_shape is required")
    shape = tuple(int(s) for s in input_shape)
    layers = []
    for raw in layer_dicts:
        d = dict(raw)
        kind = d.pop("kind")
        if kind == "conv2d":
            out = d.pop("out_channels", d.pop("out_features", None))
            if len(shape) != 3:
                raise DimensionError(f"conv2d needs (C, H, W) input, got {shape}")
            d.pop("in_features", None)
            layer = LayerSpec(kind, in_features=shape[0], out_features=int(out), **d)
        elif kind == "dense":
            if len(shape) != 1:
                raise DimensionError(f"dense needs a flat input, got {shape}; add a flatten layer")
            d.pop("in_features", None)
            layer = LayerSpec(kind, in_features=shape[0], out_features=int(d.pop("out_features")), **d)
        else:
            layer = LayerSpec(kind)
        shape = layer.output_shape(shape)
        layers.append(layer)
    model = Model(layers, input_shape)
    model.params = init_params(model, np.random.default_rng(seed))
    return model
