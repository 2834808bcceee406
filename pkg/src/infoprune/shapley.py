"""Channel attribution with Shapley values.

The players of a layer's game are its output channels. A coalition's payoff is
the drop in probe cross-entropy it achieves relative to the coalition where
every channel of the layer is masked, so the empty coalition is worth exactly 0.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import factorial

import numpy as np

from .costs import channel_removal_cost
from .engine import cross_entropy_per_sample
from .errors import CapacityError, InputError, NormalizationError
from .graph import ModelGraph, run
from .layers import Conv2d

EXACT_LIMIT = 12


class CharacteristicGame:
    """Memoised payoff function over subsets of ``n_players`` channels.

    ``loss_fn`` maps a boolean (k, n) matrix of coalitions to k losses.
    """

    def __init__(self, n_players: int, loss_fn, layer_index=None):
        self.n_players = int(n_players)
        self.layer_index = layer_index
        self._loss_fn = loss_fn
        self.baseline = float(loss_fn(np.zeros((1, self.n_players), dtype=bool))[0])
        self._cache = {0: 0.0}
        self.evaluations = 1

    def _keys(self, masks):
        weights = 1 << np.arange(self.n_players, dtype=np.int64)
        return masks.astype(np.int64) @ weights

    def values(self, masks) -> np.ndarray:
        masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        if masks.shape[1] != self.n_players:
            raise InputError(f"coalition width {masks.shape[1]} != player count {self.n_players}")
        keys = self._keys(masks)
        uniq, first = np.unique(keys, return_index=True)
        todo = [(k, i) for k, i in zip(uniq.tolist(), first.tolist()) if k not in self._cache]
        if todo:
            losses = self._loss_fn(masks[[i for _, i in todo]])
            self.evaluations += len(todo)
            for (k, _), loss in zip(todo, losses):
                self._cache[k] = self.baseline - float(loss)
        return np.array([self._cache[k] for k in keys.tolist()])

    def value(self, subset) -> float:
        mask = np.zeros(self.n_players, dtype=bool)
        mask[list(subset)] = True
        return float(self.values(mask[None])[0])

    @property
    def grand_value(self) -> float:
        return self.value(range(self.n_players))


def game_from_function(n_players: int, payoff) -> CharacteristicGame:
    """Wrap a set function ``payoff(frozenset) -> float`` with ``payoff(empty) == 0`` as a game."""

    def loss_fn(masks):
        return np.array([-payoff(frozenset(np.flatnonzero(m).tolist())) for m in masks])

    return CharacteristicGame(n_players, loss_fn)


def make_game(model: ModelGraph, layer_index: int, probe, max_batch: int = 4096) -> CharacteristicGame:
    """Game over the output channels of conv ``layer_index`` evaluated on ``probe``.

    Layers up to the target conv are evaluated once; each coalition only
    re-runs the downstream part with the complementary channels zeroed.
    """
    if not isinstance(model.layers[layer_index], Conv2d):
        raise InputError(f"layer {layer_index} is not a conv layer")
    if probe is None or len(probe) == 0:
        raise InputError("empty probe batch")
    snapshot = model.copy()
    images, labels = probe.images, probe.labels
    head = run(snapshot, images)
    needed = {j for layer in snapshot.layers[layer_index + 1:] for j in layer.inputs if j < layer_index}
    target = head.outputs[layer_index]
    b, c = target.shape[:2]
    per_chunk = max(1, max_batch // b)
    last = len(snapshot.layers) - 1

    def loss_fn(masks):
        out = np.empty(len(masks))
        for s in range(0, len(masks), per_chunk):
            chunk = masks[s:s + per_chunk].astype(np.float64)
            k = len(chunk)
            known = {j: np.concatenate([head.outputs[j]] * k) for j in needed}
            known[layer_index] = (chunk[:, None, :, None, None] * target[None]).reshape(k * b, *target.shape[1:])
            logits = run(snapshot, None, start=layer_index + 1, known=known).outputs[last]
            ce = cross_entropy_per_sample(logits, np.tile(labels, k))
            out[s:s + k] = ce.reshape(k, b).mean(axis=1)
        return out

    return CharacteristicGame(c, loss_fn, layer_index)


def coalition_weight(size: int, n: int) -> float:
    """Probability weight ``(|s|-1)! (n-|s|)! / n!`` of a coalition of ``size`` containing the player."""
    if not 1 <= size <= n:
        raise InputError(f"coalition size must lie in [1, {n}], got {size}")
    return factorial(size - 1) * factorial(n - size) / factorial(n)


@dataclass
class ShapleyReport:
    layer_index: int | None
    scores: np.ndarray
    method: str
    permutations: int
    seed: int | None
    std_err: np.ndarray | None
    normalization: str = "none"
    grand_value: float = float("nan")

    def rows(self):
        for j, s in enumerate(self.scores):
            yield {"layer": self.layer_index, "channel": j, "score": float(s),
                   "std_err": "" if self.std_err is None else float(self.std_err[j]),
                   "method": self.method, "normalization": self.normalization}


def exact_shapley(game: CharacteristicGame) -> ShapleyReport:
    """Shapley values by enumerating all 2^n coalitions."""
    n = game.n_players
    if n > EXACT_LIMIT:
        raise CapacityError(f"{n} players exceeds the exact-enumeration limit of {EXACT_LIMIT}; "
                            "use sampled_shapley")
    keys = np.arange(1 << n, dtype=np.int64)
    masks = ((keys[:, None] >> np.arange(n)) & 1).astype(bool)
    v = game.values(masks)
    sizes = masks.sum(axis=1)
    # weight of joining a coalition of size k (not containing the player)
    join_w = np.array([coalition_weight(k + 1, n) for k in range(n)])
    scores = np.zeros(n)
    for a in range(n):
        without = keys[(keys >> a) & 1 == 0]
        scores[a] = float(np.sum(join_w[sizes[without]] * (v[without | (1 << a)] - v[without])))
    return ShapleyReport(game.layer_index, scores, "exact", 0, None, None, "none", float(v[-1]))


def sampled_permutations(n: int, num_permutations: int, seed: int, antithetic: bool = True) -> np.ndarray:
    """Uniform random permutations; with ``antithetic`` each odd row reverses the previous one.

    Row ``p`` (or pair ``p // 2``) is drawn from a generator keyed by ``(seed, p)``,
    so the sequence does not depend on how many permutations are requested.
    """
    perms = np.empty((num_permutations, n), dtype=np.int64)
    for p in range(num_permutations):
        if antithetic and p % 2 == 1:
            perms[p] = perms[p - 1][::-1]
        else:
            unit = p // 2 if antithetic else p
            perms[p] = np.random.default_rng([seed, unit]).permutation(n)
    return perms


def sampled_shapley(game: CharacteristicGame, num_permutations: int, seed: int = 0,
                    antithetic: bool = True) -> ShapleyReport:
    """Monte Carlo Shapley values from random join orders.

    Every permutation adds players one at a time to a running coalition and
    credits each with its marginal payoff. The mean over permutations is an
    unbiased estimate; the standard error is taken over antithetic pairs.
    """
    if num_permutations < 1:
        raise InputError("num_permutations must be >= 1")
    n = game.n_players
    perms = sampled_permutations(n, num_permutations, seed, antithetic)
    prefixes = np.zeros((num_permutations, n + 1, n), dtype=bool)
    rows = np.arange(num_permutations)
    for t in range(n):
        prefixes[:, t + 1] = prefixes[:, t]
        prefixes[rows, t + 1, perms[:, t]] = True
    v = game.values(prefixes.reshape(-1, n)).reshape(num_permutations, n + 1)
    marg = np.empty((num_permutations, n))
    marg[rows[:, None], perms] = np.diff(v, axis=1)
    scores = marg.mean(axis=0)

    units = marg
    if antithetic:
        pairs = num_permutations // 2
        units = 0.5 * (marg[0:2 * pairs:2] + marg[1:2 * pairs:2])
    if len(units) >= 2:
        std_err = units.std(axis=0, ddof=1) / np.sqrt(len(units))
    else:
        std_err = np.zeros(n)
    return ShapleyReport(game.layer_index, scores, "sampled", num_permutations, seed, std_err, "none",
                         game.grand_value)


def layer_channel_costs(model: ModelGraph, layer_index: int, mode: str) -> np.ndarray:
    """Per-channel cost saved by deleting each output channel of the layer."""
    c = model.layers[layer_index].out_channels
    return np.full(c, channel_removal_cost(model, layer_index, mode))


def normalize_scores(report: ShapleyReport, mode: str, channel_costs=None) -> ShapleyReport:
    """Divide scores by the cost each channel's removal saves (``mode`` in none/params/flops)."""
    if mode == "none":
        return replace(report, normalization="none")
    if mode not in ("params", "flops"):
        raise NormalizationError(f"unknown normalization mode {mode!r}")
    if channel_costs is None:
        raise NormalizationError(f"{mode} normalization needs per-channel costs")
    costs = np.broadcast_to(np.asarray(channel_costs, dtype=np.float64), report.scores.shape)
    if np.any(costs <= 0):
        raise NormalizationError(f"channels {np.flatnonzero(costs <= 0).tolist()} have zero {mode} cost")
    std = None if report.std_err is None else report.std_err / costs
    return replace(report, scores=report.scores / costs, std_err=std, normalization=mode)


def shapley_for_layer(model: ModelGraph, layer_index: int, probe, seed: int = 0,
                      perms_per_channel: int = 200, exact_limit: int = EXACT_LIMIT,
                      num_permutations: int | None = None) -> ShapleyReport:
    """Exact values up to ``exact_limit`` channels, permutation sampling above it."""
    game = make_game(model, layer_index, probe)
    if game.n_players <= exact_limit:
        return exact_shapley(game)
    n_perm = num_permutations or perms_per_channel * game.n_players
    return sampled_shapley(game, n_perm, seed)
