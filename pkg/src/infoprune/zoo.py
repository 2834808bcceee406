"""Desk-scale CNN builders: a VGG-style plain net and a CIFAR-style mini ResNet."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .graph import ModelGraph, layer_shapes
from .layers import Add, Conv2d, Dense, Flatten, GlobalAvgPool, MaxPool, ReLU, Shortcut


def _kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _conv(rng, inputs, c_in, c_out, k=3, stride=1, padding=1):
    w = _kaiming(rng, (c_out, c_in, k, k), c_in * k * k)
    return Conv2d(inputs, w, np.zeros(c_out), stride, padding)


def _dense(rng, inputs, f_in, f_out):
    return Dense(inputs, rng.standard_normal((f_out, f_in)) * np.sqrt(1.0 / f_in), np.zeros(f_out))


def build_plainnet(widths, num_classes=10, input_shape=(3, 16, 16), pool_every=2, seed=0) -> ModelGraph:
    """conv3x3-ReLU blocks, a 2x2 max-pool after every ``pool_every`` convs, flatten, dense.

    >>> m = build_plainnet([8, 16], 10, (3, 32, 32))
    >>> len(m.conv_indices())
    2
    """
    widths = [int(w) for w in widths]
    if not widths:
        raise ConfigError("widths must be non-empty")
    if min(widths) < 4:
        raise ConfigError(f"every width must be >= 4, got {widths}")
    c, h, w = input_shape
    n_pools = len(widths) // pool_every if pool_every else 0
    if h >> n_pools < 1 or w >> n_pools < 1:
        raise ConfigError(f"input {h}x{w} too small for {n_pools} 2x2 poolings")

    rng = np.random.default_rng(seed)
    layers = []
    prev, c_prev = -1, c
    for n, width in enumerate(widths, start=1):
        layers.append(_conv(rng, [prev], c_prev, width))
        layers.append(ReLU([len(layers) - 1]))
        if pool_every and n % pool_every == 0:
            layers.append(MaxPool([len(layers) - 1], 2))
        prev, c_prev = len(layers) - 1, width
    layers.append(Flatten([prev]))
    model = ModelGraph(layers, input_shape, num_classes, "plainnet", {"seed": seed, "widths": widths})
    feat = layer_shapes(model)[-1][0]
    layers.append(_dense(rng, [len(layers) - 1], feat, num_classes))
    model.validate()
    return model


def build_resnet_mini(stage_widths, blocks_per_stage, num_classes=10, input_shape=(3, 16, 16), seed=0) -> ModelGraph:
    """Stem conv, residual blocks of two 3x3 convs, global average pooling, dense.

    The first block of every stage after the first halves the resolution; its
    skip path is a parameter-free stride-2 subsample with zero channel padding.
    """
    stage_widths = [int(w) for w in stage_widths]
    if not stage_widths or min(stage_widths) < 4:
        raise ConfigError(f"every stage width must be >= 4, got {stage_widths}")
    if blocks_per_stage < 1:
        raise ConfigError("blocks_per_stage must be >= 1")
    c, h, w = input_shape
    if h >> (len(stage_widths) - 1) < 1 or w >> (len(stage_widths) - 1) < 1:
        raise ConfigError(f"input {h}x{w} too small for {len(stage_widths) - 1} stride-2 stages")

    rng = np.random.default_rng(seed)
    layers = [_conv(rng, [-1], c, stage_widths[0])]
    layers.append(ReLU([0]))
    stream, c_prev = 1, stage_widths[0]
    for s, width in enumerate(stage_widths):
        for b in range(blocks_per_stage):
            stride = 2 if s > 0 and b == 0 else 1
            layers.append(_conv(rng, [stream], c_prev, width, stride=stride))
            layers.append(ReLU([len(layers) - 1]))
            layers.append(_conv(rng, [len(layers) - 1], width, width))
            conv2 = len(layers) - 1
            skip = stream
            if stride != 1 or width != c_prev:
                layers.append(Shortcut([stream], width, stride))
                skip = len(layers) - 1
            layers.append(Add([conv2, skip]))
            layers.append(ReLU([len(layers) - 1]))
            stream, c_prev = len(layers) - 1, width
    layers.append(GlobalAvgPool([stream]))
    layers.append(_dense(rng, [len(layers) - 1], c_prev, num_classes))
    model = ModelGraph(layers, input_shape, num_classes, "resnet_mini",
                       {"seed": seed, "stage_widths": stage_widths, "blocks_per_stage": blocks_per_stage})
    model.validate()
    return model
