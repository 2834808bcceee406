"""Layer vocabulary for :class:`~infoprune.graph.ModelGraph`.

Each layer names its producers by index in ``inputs`` (``-1`` is the network
input). ``forward`` takes the list of input arrays; ``backward`` returns the
gradients for those inputs plus a dict of parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import engine
from .errors import DimensionError, FormatError


@dataclass
class Layer:
    inputs: list = field(default_factory=lambda: [-1])
    kind: ClassVar[str] = "layer"
    param_names: ClassVar[tuple] = ()

    def forward(self, xs, keep_cache=False):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError

    def params(self) -> dict:
        return {name: getattr(self, name) for name in self.param_names}

    def config(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "inputs": list(self.inputs)}
        d.update(self.config())
        return d


@dataclass
class Conv2d(Layer):
    weight: np.ndarray = None
    bias: np.ndarray = None
    stride: int = 1
    padding: int = 0
    kind: ClassVar[str] = "conv"
    param_names: ClassVar[tuple] = ("weight", "bias")

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2]

    def forward(self, xs, keep_cache=False):
        out = engine.conv2d_forward(xs[0], self.weight, self.bias, self.stride, self.padding,
                                    return_cache=keep_cache)
        return out if keep_cache else (out, None)

    def backward(self, grad, cache):
        gx, gw, gb = engine.conv2d_backward(grad, cache)
        return [gx], {"weight": gw, "bias": gb}

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}


@dataclass
class Dense(Layer):
    weight: np.ndarray = None
    bias: np.ndarray = None
    kind: ClassVar[str] = "dense"
    param_names: ClassVar[tuple] = ("weight", "bias")

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def forward(self, xs, keep_cache=False):
        if keep_cache:
            return engine.dense_forward(xs[0], self.weight, self.bias, return_cache=True)
        return engine.dense_forward(xs[0], self.weight, self.bias), None

    def backward(self, grad, cache):
        gx, gw, gb = engine.dense_backward(grad, cache)
        return [gx], {"weight": gw, "bias": gb}

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


@dataclass
class ReLU(Layer):
    kind: ClassVar[str] = "relu"

    def forward(self, xs, keep_cache=False):
        return engine.relu_forward(xs[0]), (xs[0] if keep_cache else None)

    def backward(self, grad, cache):
        return [engine.relu_backward(grad, cache)], {}


@dataclass
class MaxPool(Layer):
    size: int = 2
    kind: ClassVar[str] = "maxpool"

    def forward(self, xs, keep_cache=False):
        if keep_cache:
            return engine.maxpool2d_forward(xs[0], self.size, return_cache=True)
        return engine.maxpool2d_forward(xs[0], self.size), None

    def backward(self, grad, cache):
        return [engine.maxpool2d_backward(grad, cache)], {}

    def config(self):
        return {"size": self.size}


@dataclass
class Flatten(Layer):
    kind: ClassVar[str] = "flatten"

    def forward(self, xs, keep_cache=False):
        x = xs[0]
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return [grad.reshape(cache)], {}


@dataclass
class GlobalAvgPool(Layer):
    kind: ClassVar[str] = "gap"

    def forward(self, xs, keep_cache=False):
        x = xs[0]
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, grad, cache):
        b, c, h, w = cache
        return [np.broadcast_to(grad[:, :, None, None] / (h * w), cache).copy()], {}


@dataclass
class Add(Layer):
    kind: ClassVar[str] = "add"

    def forward(self, xs, keep_cache=False):
        a, b = xs
        if a.shape != b.shape:
            raise DimensionError(f"residual add: shapes {a.shape} and {b.shape} differ")
        return a + b, None

    def backward(self, grad, cache):
        return [grad, grad], {}


@dataclass
class Shortcut(Layer):
    """Parameter-free projection: spatial subsampling by ``stride`` plus zero channel padding."""

    out_channels: int = 0
    stride: int = 2
    kind: ClassVar[str] = "shortcut"

    def forward(self, xs, keep_cache=False):
        x = xs[0]
        sub = x[:, :, ::self.stride, ::self.stride]
        extra = self.out_channels - x.shape[1]
        if extra < 0:
            raise DimensionError(f"shortcut channel axis (1): cannot shrink {x.shape[1]} to {self.out_channels}")
        out = np.pad(sub, ((0, 0), (0, extra), (0, 0), (0, 0)))
        return out, x.shape

    def backward(self, grad, cache):
        g = np.zeros(cache, dtype=engine.DTYPE)
        g[:, :, ::self.stride, ::self.stride] = grad[:, :cache[1]]
        return [g], {}

    def config(self):
        return {"out_channels": self.out_channels, "stride": self.stride}


LAYER_KINDS = {cls.kind: cls for cls in (Conv2d, Dense, ReLU, MaxPool, Flatten, GlobalAvgPool, Add, Shortcut)}

CHANNELWISE = (ReLU, MaxPool, Flatten, GlobalAvgPool)


def layer_from_dict(d: dict, params: dict | None = None) -> Layer:
    """Rebuild a layer from its ``to_dict`` form and optional parameter arrays."""
    try:
        cls = LAYER_KINDS[d["kind"]]
    except KeyError as exc:
        raise FormatError(f"unknown layer kind {d.get('kind')!r}") from exc
    params = params or {}
    inputs = [int(i) for i in d["inputs"]]
    if cls is Conv2d:
        return Conv2d(inputs, params["weight"], params["bias"], int(d["stride"]), int(d["padding"]))
    if cls is Dense:
        return Dense(inputs, params["weight"], params["bias"])
    if cls is MaxPool:
        return MaxPool(inputs, int(d["size"]))
    if cls is Shortcut:
        return Shortcut(inputs, int(d["out_channels"]), int(d["stride"]))
    return cls(inputs)
