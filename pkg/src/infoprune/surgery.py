"""Structural rewrite: physically delete masked channels from a ModelGraph."""
from __future__ import annotations

import numpy as np

from .errors import CouplingError, DegenerateLayerError
from .graph import ChannelMask, ModelGraph, _mask_map, channel_consumers, coupling_group
from .layers import Conv2d


def rewrite_model(model: ModelGraph, masks) -> ModelGraph:
    """Return a smaller copy of ``model`` with every masked channel removed.

    Filter ``j`` of the masked layer is deleted together with the matching
    input slice of each consumer (expanded over spatial positions when the
    consumer is a dense layer behind a flatten).
    """
    if isinstance(masks, ChannelMask):
        masks = [masks]
    _mask_map(model, masks)  # validates lengths and targets
    new = model.copy()
    for m in sorted(masks, key=lambda m: m.layer_index):
        if m.bits.all():
            continue
        i = m.layer_index
        if not m.bits.any():
            raise DegenerateLayerError(f"layer {i}: mask removes all {m.bits.size} channels")
        try:
            users = channel_consumers(model, i)
        except CouplingError as exc:
            group = sorted(coupling_group(model, i))
            raise CouplingError(
                f"layer {i} is coupled through residual adds with layers {group}; "
                "its channels cannot be removed on their own", group) from exc
        keep = np.flatnonzero(m.bits)
        conv = new.layers[i]
        conv.weight = conv.weight[keep].copy()
        conv.bias = conv.bias[keep].copy()
        for u, factor in users:
            layer = new.layers[u]
            if isinstance(layer, Conv2d):
                layer.weight = layer.weight[:, keep].copy()
            else:
                cols = (keep[:, None] * factor + np.arange(factor)[None, :]).ravel()
                layer.weight = layer.weight[:, cols].copy()
    new.validate()
    return new


def masks_from_scores(model: ModelGraph, scores: dict, prune_counts: dict) -> list:
    """Masks that drop the ``prune_counts[i]`` lowest-scoring channels of each layer.

    Scores may be arrays or anything with a ``scores`` attribute (a ShapleyReport).
    Ties go to the lower channel index (considered less important).
    """
    masks = []
    for i, n in prune_counts.items():
        s = np.asarray(getattr(scores[i], "scores", scores[i]), dtype=float)
        c = model.layers[i].out_channels
        if s.shape != (c,):
            raise ValueError(f"layer {i}: {s.size} scores for {c} channels")
        order = lowest_first(s)
        masks.append(ChannelMask.from_pruned(i, c, order[:int(n)]))
    return masks


def lowest_first(scores) -> np.ndarray:
    """Channel indices sorted by ascending score, lower index first among ties."""
    return np.argsort(np.asarray(scores, dtype=float), kind="stable")
