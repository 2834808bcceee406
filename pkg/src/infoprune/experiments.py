"""Multi-seed comparisons on a trained toy model.

Each helper takes a :class:`Toy` (trained model, data split, probe batches,
layer statistics) and returns plain dict rows so that scripts, the acceptance
suite and the CLI report share one implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .costs import count_costs
from .errors import PlanningError
from .info import allocate_prune_counts, constant_ratio_plan, stability_report
from .schedules import DataBundle, run_iterative_static
from .scorers import FilterNormScorer, RandomScorer, ShapleyScorer, score_layers
from .training import evaluate


@dataclass
class Toy:
    cfg: RunConfig
    model: object
    data: DataBundle
    batches: list
    stats: list
    baseline_acc: float  # percent

    @property
    def layers(self):
        return [s.layer_index for s in self.stats]


def toy_setup(cfg: RunConfig, cache: Path | None = None) -> Toy:
    """Train (or load the cached checkpoint of) the configured model and analyse it."""
    train, val = pipeline.load_data(cfg)
    if cache is not None and Path(cache).is_file():
        model = load_checkpoint(cache)
    else:
        model = pipeline.train_model(cfg, train, val)
        if cache is not None:
            save_checkpoint(model, cache)
    batches = pipeline.probe_batches(cfg, train)
    stats, _ = pipeline.analyze(cfg, model, batches)
    return Toy(cfg, model, DataBundle(train, val), batches, stats, 100.0 * evaluate(model, val)[0])


def stability_rows(toy: Toy, seeds) -> list:
    """Relative rank and entropy spread per layer for batch draws under each data seed."""
    p = toy.cfg.probe
    rows = []
    for seed in seeds:
        cfg = replace(toy.cfg, seeds=replace(toy.cfg.seeds, data=seed))
        rep = stability_report(toy.model, pipeline.probe_batches(cfg, toy.data.train), toy.cfg.analysis.rel_tol)
        for layer, rs, es in zip(rep.layers, rep.rank_spread, rep.entropy_spread):
            rows.append({"seed": seed, "layer": layer, "batches": p.num_batches, "batch_size": p.batch_size,
                         "rank_spread": float(rs), "entropy_spread": float(es)})
    return rows


def _schedule(cfg: RunConfig, seed: int):
    sc = cfg.schedule_config()
    return replace(sc, seed=seed)


def _shapley(toy: Toy, layers, seed: int) -> dict:
    """Static Shapley scores on probe batch ``seed`` (cycled), seeded permutations."""
    probe = toy.batches[seed % len(toy.batches)]
    scorer = ShapleyScorer(probe, seed, toy.cfg.shapley.perms_per_channel, toy.cfg.shapley.exact_limit)
    return score_layers(toy.model, layers, scorer)


def fusion_plan(toy: Toy, metric=None):
    p = toy.cfg.plan
    return allocate_prune_counts([s.fusion for s in toy.stats], [s.channels for s in toy.stats], p.budget, p.r_max,
                                 metric or p.metric, toy.model, toy.layers, toy.cfg.analysis.high)


def compare_criteria(toy: Toy, seeds, criteria=("shapley", "random")) -> list:
    """Iterative-static pruning of the fusion plan, once per criterion and seed."""
    plan = fusion_plan(toy)
    active = [i for i, u in plan.as_dict().items() if u > 0]
    rows = []
    for seed in seeds:
        for crit in criteria:
            if crit == "shapley":
                scores = _shapley(toy, active, seed)
            elif crit == "random":
                scores = score_layers(toy.model, active, RandomScorer(seed))
            elif crit == "l1":
                scores = score_layers(toy.model, active, FilterNormScorer())
            else:
                raise ValueError(f"unsupported criterion {crit!r}")
            _, trace = run_iterative_static(toy.model, plan, scores, _schedule(toy.cfg, seed), toy.data, crit)
            s = trace.summary
            rows.append({"seed": seed, "criterion": crit, "acc": s["pruned_acc"], "acc_drop": s["acc_drop"],
                         "flops_drop": s["flops_drop_pct"], "params_drop": s["params_drop_pct"],
                         "prune_counts": list(plan.prune_counts)})
    return rows


def kept_flops(model, plan) -> float:
    """Fraction of the model's total MACs left after applying ``plan``'s counts (exact recount)."""
    widths = {i: c - u for i, c, u in zip(plan.layers, plan.channels, plan.prune_counts)}
    return count_costs(model, widths).total_flops / count_costs(model).total_flops


def matched_constant_plan(toy: Toy, target: float, tol: float = 0.01, iters: int = 60):
    """Constant-ratio plan whose kept FLOPs fraction is within ``tol`` (relative) of ``target``.

    The constant plan's requested budget is bisected, since rounding makes its
    achieved FLOPs differ from the request.
    """
    chans = [s.channels for s in toy.stats]
    r_max = toy.cfg.plan.r_max
    lo, hi = 1e-3, 1.0
    best = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        try:
            plan = constant_ratio_plan(chans, mid, r_max, "flops", toy.model, toy.layers)
        except PlanningError:
            lo = mid
            continue
        kept = kept_flops(toy.model, plan)
        if best is None or abs(kept - target) < abs(best[1] - target):
            best = (plan, kept)
        if abs(kept - target) <= tol * target:
            return plan, kept
        lo, hi = (mid, hi) if kept < target else (lo, mid)
    return best


def compare_allocations(toy: Toy, seeds, criterion="shapley") -> list:
    """Fusion-allocated plan vs. a FLOPs-matched constant-ratio plan, same criterion and seed."""
    fusion = fusion_plan(toy, "flops")
    target = kept_flops(toy.model, fusion)
    constant, kept_c = matched_constant_plan(toy, target)
    plans = {"fusion": (fusion, target), "constant": (constant, kept_c)}
    rows = []
    for seed in seeds:
        if criterion == "shapley":
            scores = _shapley(toy, toy.layers, seed)
        else:
            scores = score_layers(toy.model, toy.layers, FilterNormScorer())
        for name, (plan, kept) in plans.items():
            sub = {i: scores[i] for i, u in plan.as_dict().items() if u > 0}
            _, trace = run_iterative_static(toy.model, plan, sub, _schedule(toy.cfg, seed), toy.data, criterion)
            rows.append({"seed": seed, "allocation": name, "acc": trace.summary["pruned_acc"],
                         "kept_flops": kept, "prune_counts": list(plan.prune_counts)})
    return rows


def wins(rows, key, better, worse) -> int:
    """Seeds on which ``better``'s accuracy is at least ``worse``'s (ties count)."""
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r[key]] = r["acc"]
    return sum(v[better] >= v[worse] for v in by_seed.values())
