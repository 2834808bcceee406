"""Channel importance criteria: Shapley values plus the rank, entropy and random baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import ModelGraph, masked_forward
from .info import EPS, channel_ranks
from .shapley import EXACT_LIMIT, ShapleyReport, shapley_for_layer


def as_scores(scores) -> dict:
    """``{layer: array}`` from a dict of arrays or ShapleyReports (or a list of reports)."""
    if isinstance(scores, (list, tuple)):
        scores = {r.layer_index: r for r in scores}
    return {int(i): np.asarray(s.scores if isinstance(s, ShapleyReport) else s, dtype=float)
            for i, s in scores.items()}


@dataclass
class ShapleyScorer:
    probe: object
    seed: int = 0
    perms_per_channel: int = 200
    exact_limit: int = EXACT_LIMIT
    name: str = "shapley"

    def __call__(self, model: ModelGraph, layer: int) -> ShapleyReport:
        return shapley_for_layer(model, layer, self.probe, self.seed, self.perms_per_channel, self.exact_limit)


@dataclass
class RandomScorer:
    """Uniform random scores; a fresh stream per (seed, layer, width)."""

    seed: int = 0
    name: str = "random"

    def __call__(self, model: ModelGraph, layer: int) -> np.ndarray:
        c = model.layers[layer].out_channels
        return np.random.default_rng([self.seed, layer, c]).random(c)


@dataclass
class RankScorer:
    """Average numerical rank of each channel's feature maps over the probe."""

    probe: object
    rel_tol: float = EPS
    name: str = "rank"

    def __call__(self, model: ModelGraph, layer: int) -> np.ndarray:
        _, acts = masked_forward(model, self.probe.images)
        return channel_ranks(acts[layer], self.rel_tol).mean(axis=0).astype(float)


@dataclass
class EntropyScorer:
    """Shannon entropy of each channel's spatially pooled activation histogram over the probe."""

    probe: object
    bins: int = 32
    name: str = "entropy"

    def __call__(self, model: ModelGraph, layer: int) -> np.ndarray:
        _, acts = masked_forward(model, self.probe.images)
        pooled = acts[layer].mean(axis=(2, 3))
        out = np.zeros(pooled.shape[1])
        for j in range(pooled.shape[1]):
            hist, _ = np.histogram(pooled[:, j], bins=self.bins)
            p = hist[hist > 0] / hist.sum()
            out[j] = float(-(p * np.log(p)).sum())
        return out


@dataclass
class FilterNormScorer:
    """L1 norm of each output filter (cheap, deterministic; handy for schedule tests)."""

    name: str = "l1"

    def __call__(self, model: ModelGraph, layer: int) -> np.ndarray:
        w = model.layers[layer].weight
        return np.abs(w).reshape(w.shape[0], -1).sum(axis=1)


def make_scorer(criterion: str, probe=None, seed: int = 0, perms_per_channel: int = 200,
                exact_limit: int = EXACT_LIMIT):
    if criterion == "shapley":
        return ShapleyScorer(probe, seed, perms_per_channel, exact_limit)
    if criterion == "random":
        return RandomScorer(seed)
    if criterion == "rank":
        return RankScorer(probe)
    if criterion == "entropy":
        return EntropyScorer(probe)
    if criterion == "l1":
        return FilterNormScorer()
    raise ConfigError(f"unknown criterion {criterion!r}")


def score_layers(model: ModelGraph, layers, scorer) -> dict:
    return {i: scorer(model, i) for i in layers}
