"""FLOPs (multiply-accumulate count) and parameter accounting."""
from __future__ import annotations

from dataclasses import dataclass

from .graph import ModelGraph, layer_shapes
from .layers import Conv2d, Dense


@dataclass(frozen=True)
class CostProfile:
    flops: tuple
    params: tuple

    @property
    def total_flops(self):
        return sum(self.flops)

    @property
    def total_params(self):
        return sum(self.params)


def _layer_costs(model: ModelGraph, channels=None):
    shapes = layer_shapes(model, channels)
    flops, params = [], []
    for i, layer in enumerate(model.layers):
        src = [model.input_shape if j == -1 else shapes[j] for j in layer.inputs]
        if isinstance(layer, Conv2d):
            k2 = layer.kernel ** 2
            c_in, (c_out, h, w) = src[0][0], shapes[i]
            flops.append(k2 * c_in * c_out * h * w)
            params.append(k2 * c_in * c_out + c_out)
        elif isinstance(layer, Dense):
            f_in, f_out = src[0][0], layer.out_features
            flops.append(f_in * f_out)
            params.append(f_in * f_out + f_out)
        else:
            flops.append(0)
            params.append(0)
    return flops, params


def count_costs(model: ModelGraph, channels: dict | None = None) -> CostProfile:
    """Per-layer MACs and parameters; ``channels`` optionally overrides conv output widths.

    Conv: ``k^2 c_in c_out h_out w_out`` MACs and ``k^2 c_in c_out + c_out`` params.
    """
    flops, params = _layer_costs(model, channels)
    return CostProfile(tuple(int(round(f)) for f in flops), tuple(int(round(p)) for p in params))


def cost_totals(model: ModelGraph, channels: dict | None = None, metric: str = "flops") -> float:
    """Total cost with possibly fractional channel counts (used by the planner)."""
    flops, params = _layer_costs(model, channels)
    if metric == "flops":
        return float(sum(flops))
    if metric == "params":
        return float(sum(params))
    raise ValueError(f"unknown cost metric {metric!r}")


def channel_removal_cost(model: ModelGraph, layer_index: int, metric: str = "flops") -> float:
    """Network cost saved by structurally deleting one output channel of ``layer_index``."""
    c = model.layers[layer_index].out_channels
    return cost_totals(model, metric=metric) - cost_totals(model, {layer_index: c - 1}, metric)
