"""ModelGraph container, forward/backward passes, channel masking and channel topology."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .engine import as_tensor, conv2d_output_size
from .errors import ConfigError, CouplingError, DimensionError
from .layers import CHANNELWISE, Add, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, MaxPool, ReLU, Shortcut


@dataclass
class ChannelMask:
    layer_index: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    @property
    def kept(self) -> int:
        return int(self.bits.sum())

    @property
    def pruned(self) -> int:
        return int(self.bits.size - self.bits.sum())

    @classmethod
    def keep_all(cls, layer_index, n):
        return cls(layer_index, np.ones(n, dtype=bool))

    @classmethod
    def from_pruned(cls, layer_index, n, pruned):
        bits = np.ones(n, dtype=bool)
        bits[list(pruned)] = False
        return cls(layer_index, bits)


@dataclass
class ModelGraph:
    layers: list
    input_shape: tuple
    num_classes: int
    arch_name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def conv_indices(self) -> list:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv2d)]

    def prunable_layers(self) -> list:
        """Conv layers whose output channels can be removed without touching a residual stream."""
        return [i for i in self.conv_indices() if not is_coupled(self, i)]

    def out_channels(self, i) -> int:
        return self.layers[i].out_channels

    def parameters(self) -> dict:
        return {(i, name): arr for i, layer in enumerate(self.layers) for name, arr in layer.params().items()}

    def set_parameters(self, params: dict) -> None:
        for (i, name), arr in params.items():
            setattr(self.layers[i], name, arr)

    def validate(self) -> None:
        layer_shapes(self)


# --------------------------------------------------------------------------
# shapes
# --------------------------------------------------------------------------


def layer_shapes(model: ModelGraph, channels: dict | None = None) -> list:
    """Output shape of every layer; ``channels`` overrides conv output widths (floats allowed)."""
    channels = channels or {}
    check = not channels
    shapes = []

    def src(j):
        return tuple(model.input_shape) if j == -1 else shapes[j]

    for i, layer in enumerate(model.layers):
        ins = [src(j) for j in layer.inputs]
        if any(j >= i for j in layer.inputs):
            raise ConfigError(f"layer {i}: inputs {layer.inputs} must precede it")
        s = ins[0]
        if isinstance(layer, Conv2d):
            if len(s) != 3:
                raise DimensionError(f"layer {i} (conv): expected c x h x w input, got {s}")
            if check and not _close(s[0], layer.in_channels):
                raise DimensionError(f"layer {i} (conv) channel axis: input has {s[0]}, weights expect {layer.in_channels}")
            k, st, p = layer.kernel, layer.stride, layer.padding
            if k > s[1] + 2 * p or k > s[2] + 2 * p:
                raise ConfigError(f"layer {i} (conv): {s[1]}x{s[2]} input too small for kernel {k}")
            shapes.append((channels.get(i, layer.out_channels),
                           conv2d_output_size(s[1], k, st, p), conv2d_output_size(s[2], k, st, p)))
        elif isinstance(layer, MaxPool):
            h, w = s[1] // layer.size, s[2] // layer.size
            if h == 0 or w == 0:
                raise ConfigError(f"layer {i} (maxpool): {s[1]}x{s[2]} input too small to pool")
            shapes.append((s[0], h, w))
        elif isinstance(layer, ReLU):
            shapes.append(s)
        elif isinstance(layer, Flatten):
            shapes.append((s[0] * s[1] * s[2],))
        elif isinstance(layer, GlobalAvgPool):
            shapes.append((s[0],))
        elif isinstance(layer, Dense):
            if check and s != (layer.in_features,):
                raise DimensionError(f"layer {i} (dense) feature axis: input {s}, weights expect {layer.in_features}")
            shapes.append((layer.out_features,))
        elif isinstance(layer, Add):
            if check and ins[0] != ins[1]:
                raise DimensionError(f"layer {i} (add): source shapes {ins[0]} and {ins[1]} differ")
            shapes.append(s)
        elif isinstance(layer, Shortcut):
            st = layer.stride
            shapes.append((layer.out_channels, -(-s[1] // st), -(-s[2] // st)))
        else:
            raise ConfigError(f"layer {i}: unsupported layer {type(layer).__name__}")
    return shapes


def _close(a, b):
    return abs(a - b) < 1e-9


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


@dataclass
class Tape:
    outputs: dict
    caches: dict
    masks: dict


def _mask_map(model: ModelGraph, masks) -> dict:
    if not masks:
        return {}
    if isinstance(masks, dict):
        masks = [ChannelMask(i, b) for i, b in masks.items()]
    out = {}
    for m in masks:
        if not 0 <= m.layer_index < len(model.layers) or not isinstance(model.layers[m.layer_index], Conv2d):
            raise ConfigError(f"mask references layer {m.layer_index}, which is not a conv layer")
        c = model.layers[m.layer_index].out_channels
        if m.bits.shape != (c,):
            raise DimensionError(f"mask for layer {m.layer_index}: {m.bits.size} bits for {c} channels")
        if not m.bits.all():
            out[m.layer_index] = m.bits.astype(np.float64)
    return out


def recorded_layer(model: ModelGraph, i: int) -> int:
    """Index whose output represents conv ``i``'s activations: its ReLU if that is the sole consumer."""
    users = consumers(model).get(i, [])
    if len(users) == 1 and isinstance(model.layers[users[0]], ReLU):
        return users[0]
    return i


def run(model: ModelGraph, x, masks=None, keep_cache=False, start=0, known=None, mask_arrays=None) -> Tape:
    """Evaluate layers ``start..`` given already-computed outputs ``known`` for earlier ones.

    ``mask_arrays`` maps layer index to a per-channel (or per-sample x channel)
    multiplier and bypasses validation of ``masks``.
    """
    mask_map = mask_arrays if mask_arrays is not None else _mask_map(model, masks)
    outputs = dict(known or {})
    if start == 0:
        x = as_tensor(x)
        if x.shape[1:] != tuple(model.input_shape):
            raise DimensionError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
        outputs[-1] = x
    caches = {}
    for i in range(start, len(model.layers)):
        layer = model.layers[i]
        y, cache = layer.forward([outputs[j] for j in layer.inputs], keep_cache=keep_cache)
        m = mask_map.get(i)
        if m is not None:
            y = y * _expand(m)
        outputs[i] = y
        if keep_cache:
            caches[i] = cache
    return Tape(outputs, caches, mask_map)


def _expand(m):
    return m[None, :, None, None] if m.ndim == 1 else m[:, :, None, None]


def predict(model: ModelGraph, x) -> np.ndarray:
    return run(model, x).outputs[len(model.layers) - 1]


def masked_forward(model: ModelGraph, x, masks=None):
    """Logits plus per-conv activations with masked channels zeroed (bias included)."""
    tape = run(model, x, masks)
    acts = {i: tape.outputs[recorded_layer(model, i)] for i in model.conv_indices()}
    return tape.outputs[len(model.layers) - 1], acts


def forward_train(model: ModelGraph, x, masks=None):
    tape = run(model, x, masks, keep_cache=True)
    return tape.outputs[len(model.layers) - 1], tape


def backward(model: ModelGraph, tape: Tape, grad_logits) -> dict:
    """Parameter gradients ``{(layer, name): array}`` for a cached forward pass."""
    n = len(model.layers)
    grads_out = {n - 1: grad_logits}
    param_grads = {}
    for i in range(n - 1, -1, -1):
        g = grads_out.pop(i, None)
        if g is None:
            continue
        m = tape.masks.get(i)
        if m is not None:
            g = g * _expand(m)
        layer = model.layers[i]
        in_grads, pg = layer.backward(g, tape.caches.get(i))
        for name, arr in pg.items():
            param_grads[(i, name)] = arr
        for j, gj in zip(layer.inputs, in_grads):
            if j < 0:
                continue
            grads_out[j] = grads_out[j] + gj if j in grads_out else gj
    return param_grads


# --------------------------------------------------------------------------
# channel topology
# --------------------------------------------------------------------------


def consumers(model: ModelGraph) -> dict:
    users = {}
    for i, layer in enumerate(model.layers):
        for j in layer.inputs:
            users.setdefault(j, []).append(i)
    return users


def channel_consumers(model: ModelGraph, i: int) -> list:
    """Conv/dense layers reading conv ``i``'s channels, with features-per-channel factor.

    Walks through channel-wise layers (relu, pool, flatten, global pooling).
    Raises :class:`CouplingError` when the channels reach a residual add.
    """
    users = consumers(model)
    shapes = layer_shapes(model)
    found = []
    stack = [(i, 1)]
    while stack:
        j, factor = stack.pop()
        for u in users.get(j, []):
            layer = model.layers[u]
            if isinstance(layer, (Conv2d, Dense)):
                found.append((u, factor))
            elif isinstance(layer, Flatten):
                s = shapes[j]
                stack.append((u, factor * s[1] * s[2]))
            elif isinstance(layer, CHANNELWISE):
                stack.append((u, factor))
            else:
                raise CouplingError(
                    f"layer {i} feeds a residual stream; coupled group {sorted(coupling_group(model, i))}",
                    sorted(coupling_group(model, i)))
    return sorted(found)


def is_coupled(model: ModelGraph, i: int) -> bool:
    try:
        channel_consumers(model, i)
    except CouplingError:
        return True
    return False


def coupling_groups(model: ModelGraph) -> list:
    """Sets of conv layers tied together through residual adds."""
    parent = {}

    def find(a):
        parent.setdefault(a, a)
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def sources(j):
        if j < 0:
            return set()
        layer = model.layers[j]
        if isinstance(layer, Conv2d):
            return {j}
        return set().union(*(sources(k) for k in layer.inputs))

    for layer in model.layers:
        if isinstance(layer, Add):
            srcs = sorted(sources(layer.inputs[0]) | sources(layer.inputs[1]))
            for s in srcs:
                find(s)
            for a, b in zip(srcs, srcs[1:]):
                parent[find(a)] = find(b)
    groups = {}
    for a in parent:
        groups.setdefault(find(a), set()).add(a)
    return sorted(groups.values(), key=min)


def coupling_group(model: ModelGraph, i: int) -> set:
    for g in coupling_groups(model):
        if i in g:
            return g
    return {i}
