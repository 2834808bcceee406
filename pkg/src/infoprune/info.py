"""Layer information statistics (average rank, average entropy), fusion and prune-count allocation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import cost_totals
from .errors import InputError, PlanningError
from .graph import ModelGraph, masked_forward

EPS = np.finfo(np.float64).eps


# --------------------------------------------------------------------------
# per-layer indicators
# --------------------------------------------------------------------------


def channel_ranks(maps, rel_tol: float = EPS) -> np.ndarray:
    """Numerical rank of every trailing h x w matrix in ``maps``.

    A singular value counts when it exceeds ``rel_tol * sigma_max * max(h, w)``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 2:
        raise InputError(f"expected (..., h, w) maps, got shape {maps.shape}")
    sv = np.linalg.svd(maps, compute_uv=False)
    thresh = rel_tol * sv[..., :1] * max(maps.shape[-2:])
    return (sv > thresh).sum(axis=-1)


def channel_rank(feature_map, rel_tol: float = EPS) -> int:
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 2:
        raise InputError(f"expected an h x w map, got shape {fm.shape}")
    return int(channel_ranks(fm, rel_tol))


def layer_average_rank(activations, rel_tol: float = EPS) -> float:
    """Mean numerical rank over all (image, channel) maps of a B x c x h x w activation."""
    acts = np.asarray(activations, dtype=np.float64)
    b, c = acts.shape[:2]
    return float(channel_ranks(acts, rel_tol).sum() / (b * c))


def _softmax(a):
    e = np.exp(a - a.max())
    return e / e.sum()


def channel_distribution(activations) -> np.ndarray:
    """Softmax over channels of each channel's mean activation."""
    acts = np.asarray(activations, dtype=np.float64)
    return _softmax(acts.mean(axis=(0, 2, 3)))


def layer_entropy(activations) -> float:
    """Entropy (nats) of the channel distribution divided by the channel count."""
    acts = np.asarray(activations, dtype=np.float64)
    return _entropy_from_means(acts.mean(axis=(0, 2, 3)))


def minmax_scale(values, low: float = 1.0, high: float = 10.0) -> np.ndarray:
    """Affine map sending min to ``low`` and max to ``high``; constant input maps to the midpoint."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("minmax_scale needs at least one value")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, (low + high) / 2.0)
    out = (high - low) * (v - lo) / (hi - lo) + low
    out = np.clip(out, low, high)
    out[v == lo] = low
    out[v == hi] = high
    return out


def fuse(avg_ranks, avg_entropies, low: float = 1.0, high: float = 10.0):
    """Scale both indicators to [low, high], multiply, and rescale the product to [low, high].

    Returns ``(rank_scaled, entropy_scaled, fusion)``.
    """
    r = minmax_scale(avg_ranks, low, high)
    e = minmax_scale(avg_entropies, low, high)
    return r, e, minmax_scale(r * e, low, high)


@dataclass
class LayerInfoStats:
    layer_index: int
    channels: int
    avg_rank: float
    avg_entropy: float
    rank_scaled: float = float("nan")
    entropy_scaled: float = float("nan")
    fusion: float = float("nan")


def collect_layer_stats(model: ModelGraph, batches, layers=None, rel_tol: float = EPS):
    """Raw per-layer ``(avg_rank, channel_means)`` accumulated over probe batches.

    Returns two dicts keyed by layer: average rank over all probe images, and
    the per-channel activation mean over all probe images and positions.
    """
    layers = list(model.prunable_layers() if layers is None else layers)
    rank_sum = {i: 0.0 for i in layers}
    mean_sum = {i: 0.0 for i in layers}
    count = 0
    for batch in batches:
        images = batch.images if hasattr(batch, "images") else batch
        _, acts = masked_forward(model, images)
        for i in layers:
            a = acts[i]
            rank_sum[i] += float(channel_ranks(a, rel_tol).sum()) / a.shape[1]
            mean_sum[i] = mean_sum[i] + a.mean(axis=(2, 3)).sum(axis=0)
        count += len(images)
    return {i: rank_sum[i] / count for i in layers}, {i: mean_sum[i] / count for i in layers}


def _entropy_from_means(means) -> float:
    p = _softmax(np.asarray(means, dtype=np.float64))
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum() / p.size)


def analyze_layers(model: ModelGraph, batches, layers=None, rel_tol: float = EPS,
                   low: float = 1.0, high: float = 10.0) -> list:
    """Average rank, average entropy, scaled values and fusion for each layer."""
    ranks, means = collect_layer_stats(model, batches, layers, rel_tol)
    idx = list(ranks)
    stats = [LayerInfoStats(i, model.layers[i].out_channels, ranks[i], _entropy_from_means(means[i])) for i in idx]
    r, e, f = fuse([s.avg_rank for s in stats], [s.avg_entropy for s in stats], low, high)
    for s, rs, es, fs in zip(stats, r, e, f):
        s.rank_scaled, s.entropy_scaled, s.fusion = float(rs), float(es), float(fs)
    return stats


# --------------------------------------------------------------------------
# batch stability
# --------------------------------------------------------------------------


@dataclass
class StabilityReport:
    layers: list
    ranks: np.ndarray      # layers x batches
    entropies: np.ndarray  # layers x batches

    @staticmethod
    def _spread(table):
        mean = table.mean(axis=1)
        width = table.max(axis=1) - table.min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(width == 0, 0.0, width / np.abs(mean))

    @property
    def rank_spread(self):
        return self._spread(self.ranks)

    @property
    def entropy_spread(self):
        return self._spread(self.entropies)

    def rows(self):
        for li, layer in enumerate(self.layers):
            for b in range(self.ranks.shape[1]):
                yield {"layer": layer, "batch": b, "avg_rank": float(self.ranks[li, b]),
                       "avg_entropy": float(self.entropies[li, b])}


def stability_report(model: ModelGraph, batches, rel_tol: float = EPS, layers=None) -> StabilityReport:
    """Per-layer, per-batch average rank and entropy."""
    if len(batches) < 2:
        raise InputError("stability analysis needs at least two probe batches")
    layers = list(model.prunable_layers() if layers is None else layers)
    ranks = np.zeros((len(layers), len(batches)))
    ents = np.zeros_like(ranks)
    for b, batch in enumerate(batches):
        images = batch.images if hasattr(batch, "images") else batch
        _, acts = masked_forward(model, images)
        for li, i in enumerate(layers):
            ranks[li, b] = layer_average_rank(acts[i], rel_tol)
            ents[li, b] = layer_entropy(acts[i])
    return StabilityReport(layers, ranks, ents)


# --------------------------------------------------------------------------
# allocation
# --------------------------------------------------------------------------


@dataclass
class PrunePlan:
    layers: list
    channels: list
    prune_counts: list
    fusion: list
    metric: str
    target: float
    achieved: float
    r_max: float
    meta: dict = field(default_factory=dict)

    @property
    def keep_counts(self):
        return [c - u for c, u in zip(self.channels, self.prune_counts)]

    def as_dict(self) -> dict:
        """``{layer: prune_count}``."""
        return dict(zip(self.layers, self.prune_counts))

    def to_json(self) -> dict:
        d = asdict(self)
        d["keep_counts"] = self.keep_counts
        return d

    @classmethod
    def from_json(cls, d) -> "PrunePlan":
        d = {k: v for k, v in d.items() if k != "keep_counts"}
        return cls(**d)


def _kept_fraction_fn(metric, channels, model, layers):
    if metric == "channels":
        total = float(sum(channels))
        return lambda keep: float(np.sum(keep)) / total
    if metric in ("flops", "params"):
        if model is None or layers is None:
            raise InputError(f"a {metric} budget needs the model and layer indices")
        full = cost_totals(model, metric=metric)
        return lambda keep: cost_totals(model, dict(zip(layers, keep)), metric) / full
    raise InputError(f"unknown budget metric {metric!r}")


def allocate_prune_counts(fusion, channels, kept_fraction: float, r_max: float = 0.9, metric: str = "channels",
                          model: ModelGraph | None = None, layers=None, high: float = 10.0) -> PrunePlan:
    """Per-layer prune counts from fusion values under a global kept-cost budget.

    Layer ``i`` keeps the fraction ``clip(alpha * fusion_i / high, 1 - r_max, 1)``
    of its channels, with the single scale ``alpha`` found by bisection so the
    kept cost (channels, FLOPs or params) equals ``kept_fraction`` before rounding.
    Counts are rounded, capped at ``floor(r_max * c_i)`` and leave at least one channel.
    """
    f = np.asarray(fusion, dtype=np.float64)
    c = np.asarray(channels, dtype=np.int64)
    if f.shape != c.shape or f.size == 0:
        raise InputError("fusion and channels must be non-empty and the same length")
    if not 0 < kept_fraction <= 1:
        raise InputError(f"kept_fraction must lie in (0, 1], got {kept_fraction}")
    if not 0 <= r_max < 1:
        raise InputError(f"r_max must lie in [0, 1), got {r_max}")
    if np.any(f <= 0):
        raise InputError("fusion values must be positive")
    layers = list(layers) if layers is not None else list(range(f.size))
    kept_of = _kept_fraction_fn(metric, c, model, layers)
    floor_keep = 1.0 - r_max

    def keep_frac(alpha):
        return np.clip(alpha * f / high, floor_keep, 1.0)

    min_keep = np.maximum(c - np.floor(r_max * c).astype(np.int64), 1)
    floor_cost = kept_of(keep_frac(0.0) * c)
    if kept_fraction < floor_cost - 1e-12:
        tightest = min(floor_cost, kept_of(min_keep))
        raise PlanningError(f"budget {kept_fraction:.4f} infeasible with r_max={r_max}; "
                            f"tightest achievable is {tightest:.4f}", tightest)

    lo, hi = 0.0, high / f.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kept_of(keep_frac(mid) * c) < kept_fraction:
            lo = mid
        else:
            hi = mid
    kappa = keep_frac(hi)
    keep = np.clip(np.rint(kappa * c).astype(np.int64), min_keep, c)
    prune = (c - keep).astype(int)
    return PrunePlan(layers, c.tolist(), prune.tolist(), f.tolist(), metric, float(kept_fraction),
                     float(kept_of(keep)), float(r_max), {"alpha": hi})


def constant_ratio_plan(channels, kept_fraction, r_max=0.9, metric="channels", model=None, layers=None) -> PrunePlan:
    """Baseline plan with the same keep ratio in every layer, matched to the same budget."""
    plan = allocate_prune_counts(np.ones(len(channels)), channels, kept_fraction, r_max, metric, model, layers, 1.0)
    plan.meta["allocation"] = "constant"
    return plan
