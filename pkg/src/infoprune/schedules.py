"""Pruning schedules: one-shot, iterative static, iterative dynamic and progressive."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .costs import channel_removal_cost, count_costs
from .errors import ConfigError, PlanningError
from .graph import ChannelMask, ModelGraph
from .info import PrunePlan
from .scorers import as_scores
from .surgery import lowest_first, masks_from_scores, rewrite_model
from .training import LRSchedule, Trainer, evaluate, finetune

SCHEDULES = ("one_shot", "iterative_static", "iterative_dynamic", "progressive")


@dataclass
class ScheduleConfig:
    schedule: str = "iterative_static"
    finetune_epochs: int = 2
    retrain_epochs: int = 20
    lr: LRSchedule = field(default_factory=lambda: LRSchedule(0.01))
    retrain_lr: LRSchedule = field(default_factory=lambda: LRSchedule(0.01, (10, 15)))
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    progressive_step: int = 1
    progressive_train_steps: int = 1
    rescore_every: int = 10
    normalization: str = "none"
    target_metric: str = "channels"

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if min(self.finetune_epochs, self.retrain_epochs, self.progressive_train_steps) < 0:
            raise ConfigError("epoch and step counts must be >= 0")
        if self.progressive_step < 1 or self.rescore_every < 1:
            raise ConfigError("progressive_step and rescore_every must be >= 1")
        if self.normalization not in ("none", "params", "flops"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")


@dataclass
class DataBundle:
    train: object
    val: object = None
    probe: object = None


@dataclass
class PruneTrace:
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def log(self, **event):
        self.events.append(event)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "trace.jsonl").open("w", encoding="utf-8") as f:
            for e in self.events:
                f.write(json.dumps(e, sort_keys=True) + "\n")
        (directory / "summary.json").write_text(json.dumps(self.summary, sort_keys=True, indent=2) + "\n",
                                                encoding="utf-8")


class _Run:
    """Bookkeeping shared by all schedules: reference costs, accuracy snapshots, trace."""

    def __init__(self, model: ModelGraph, config: ScheduleConfig, data: DataBundle, criterion: str):
        self.config = config
        self.data = data
        self.criterion = criterion
        self.ref = count_costs(model)
        self.trace = PruneTrace()
        self.baseline_acc = self.accuracy(model)

    def accuracy(self, model):
        if self.data.val is None:
            return None
        return evaluate(model, self.data.val)[0]

    def kept(self, model):
        cp = count_costs(model)
        return 100.0 * cp.total_flops / self.ref.total_flops, 100.0 * cp.total_params / self.ref.total_params

    def event(self, model, **info):
        kf, kp = self.kept(model)
        acc = self.accuracy(model) if info.pop("snapshot", True) else None
        self.trace.log(**info, kept_flops_pct=kf, kept_params_pct=kp,
                       accuracy=None if acc is None else 100.0 * acc)

    def finetune(self, model, epochs, schedule, seed_offset):
        return finetune(model, self.data.train, epochs, schedule, self.config.batch_size,
                        self.config.momentum, self.config.weight_decay, self.config.seed + seed_offset)

    def finish(self, model):
        model = self.finetune(model, self.config.retrain_epochs, self.config.retrain_lr, 10_000)
        cp = count_costs(model)
        acc = self.accuracy(model)
        base = None if self.baseline_acc is None else 100.0 * self.baseline_acc
        pruned = None if acc is None else 100.0 * acc
        self.trace.summary = {
            "schedule": self.config.schedule,
            "criterion": self.criterion,
            "baseline_acc": base,
            "pruned_acc": pruned,
            "acc_drop": None if base is None else base - pruned,
            "flops_drop_pct": 100.0 * (1 - cp.total_flops / self.ref.total_flops),
            "params_drop_pct": 100.0 * (1 - cp.total_params / self.ref.total_params),
            "kept_flops": cp.total_flops,
            "kept_params": cp.total_params,
            "ref_flops": self.ref.total_flops,
            "ref_params": self.ref.total_params,
        }
        self.trace.log(event="retrain", epochs=self.config.retrain_epochs,
                       kept_flops_pct=100.0 * cp.total_flops / self.ref.total_flops,
                       kept_params_pct=100.0 * cp.total_params / self.ref.total_params,
                       accuracy=pruned)
        return model


def _check_scores(plan: PrunePlan, scores: dict):
    missing = [i for i, u in plan.as_dict().items() if u > 0 and i not in scores]
    if missing:
        raise ConfigError(f"no scores for planned layers {missing}")


def _prune_layer(model, layer, n, layer_scores):
    c = model.layers[layer].out_channels
    order = lowest_first(layer_scores)
    removed = sorted(order[:n].tolist())
    return rewrite_model(model, [ChannelMask.from_pruned(layer, c, removed)]), removed


def run_one_shot(model: ModelGraph, plan: PrunePlan, scores: dict, config: ScheduleConfig, data: DataBundle,
                 criterion: str = "shapley"):
    """Remove every planned channel in one rewrite, then retrain."""
    scores = as_scores(scores)
    _check_scores(plan, scores)
    run = _Run(model, config, data, criterion)
    counts = {i: u for i, u in plan.as_dict().items() if u > 0}
    masks = masks_from_scores(model, scores, counts)
    pruned = rewrite_model(model, masks)
    for m in masks:
        run.event(pruned, event="prune", layer=m.layer_index,
                  removed=np.flatnonzero(~m.bits).tolist(), snapshot=False)
    run.event(pruned, event="one_shot_done")
    return run.finish(pruned), run.trace


def run_iterative_static(model: ModelGraph, plan: PrunePlan, scores: dict, config: ScheduleConfig,
                         data: DataBundle, criterion: str = "shapley"):
    """Layer by layer in index order with scores from the unpruned model; fine-tune after each layer."""
    scores = as_scores(scores)
    _check_scores(plan, scores)
    run = _Run(model, config, data, criterion)
    for k, (layer, n) in enumerate(sorted(plan.as_dict().items())):
        removed = []
        if n > 0:
            model, removed = _prune_layer(model, layer, n, scores[layer])
        model = run.finetune(model, config.finetune_epochs, config.lr, k + 1)
        run.event(model, event="prune", layer=layer, removed=removed)
    return run.finish(model), run.trace


def run_iterative_dynamic(model: ModelGraph, plan: PrunePlan, config: ScheduleConfig, data: DataBundle,
                          scorer, criterion: str = "shapley"):
    """As iterative static, but each layer is scored on the current model right before pruning."""
    run = _Run(model, config, data, criterion)
    for k, (layer, n) in enumerate(sorted(plan.as_dict().items())):
        removed = []
        if n > 0:
            layer_scores = as_scores({layer: scorer(model, layer)})[layer]
            run.trace.log(event="score", layer=layer)
            model, removed = _prune_layer(model, layer, n, layer_scores)
        model = run.finetune(model, config.finetune_epochs, config.lr, k + 1)
        run.event(model, event="prune", layer=layer, removed=removed)
    return run.finish(model), run.trace


def kept_fraction(model: ModelGraph, reference: ModelGraph, metric: str, layers) -> float:
    if metric == "channels":
        return sum(model.layers[i].out_channels for i in layers) / sum(reference.layers[i].out_channels for i in layers)
    a, b = count_costs(model), count_costs(reference)
    if metric == "flops":
        return a.total_flops / b.total_flops
    if metric == "params":
        return a.total_params / b.total_params
    raise ConfigError(f"unknown target metric {metric!r}")


def normalized_layer_scores(model: ModelGraph, raw: dict, mode: str) -> dict:
    if mode == "none":
        return dict(raw)
    return {i: np.asarray(s) / channel_removal_cost(model, i, mode) for i, s in raw.items()}


def global_argmin(norm: dict, removable) -> tuple:
    """Lowest score over all removable layers; ties go to the lower layer, then lower channel."""
    best = None
    for i in sorted(removable):
        j = int(lowest_first(norm[i])[0])
        if best is None or norm[i][j] < best[2]:
            best = (i, j, float(norm[i][j]))
    return best


def run_progressive(model: ModelGraph, target_kept_fraction: float, config: ScheduleConfig, data: DataBundle,
                    scorer, criterion: str = "shapley"):
    """Repeatedly drop the globally least important channel(s) while training, then fine-tune.

    Scores are refreshed every ``config.rescore_every`` iterations; in between,
    the cached scores of surviving channels are re-normalized against the
    current structure before each removal.
    """
    reference = model
    layers = model.prunable_layers()
    metric = config.target_metric
    if not 0 < target_kept_fraction <= 1:
        raise PlanningError(f"target kept fraction must lie in (0, 1], got {target_kept_fraction}")
    floor_model = rewrite_model(model, [ChannelMask.from_pruned(i, model.layers[i].out_channels,
                                                                range(1, model.layers[i].out_channels))
                                        for i in layers])
    tightest = kept_fraction(floor_model, reference, metric, layers)
    if target_kept_fraction < tightest - 1e-12:
        raise PlanningError(f"target {target_kept_fraction:.4f} infeasible; tightest is {tightest:.4f}", tightest)

    run = _Run(model, config, data, criterion)
    trainer = Trainer(model.copy(), config.lr, config.batch_size, config.momentum, config.weight_decay, config.seed)
    model = trainer.model
    ids = {i: list(range(model.layers[i].out_channels)) for i in layers}
    raw = {}
    it = 0
    while kept_fraction(model, reference, metric, layers) > target_kept_fraction + 1e-12:
        if it % config.rescore_every == 0:
            raw = {i: np.asarray(as_scores({i: scorer(model, i)})[i], dtype=float) for i in layers}
            run.trace.log(event="score", iteration=it)
        for _ in range(config.progressive_step):
            if kept_fraction(model, reference, metric, layers) <= target_kept_fraction + 1e-12:
                break
            removable = [i for i in layers if model.layers[i].out_channels > 1]
            norm = normalized_layer_scores(model, {i: raw[i] for i in removable}, config.normalization)
            layer, j, score = global_argmin(norm, removable)
            model = rewrite_model(model, [ChannelMask.from_pruned(layer, model.layers[layer].out_channels, [j])])
            raw[layer] = np.delete(raw[layer], j)
            original = ids[layer].pop(j)
            run.event(model, event="remove", iteration=it, layer=layer, channel=original, position=j,
                      score=score, snapshot=False)
        trainer.model = model
        for _ in range(config.progressive_train_steps):
            trainer.step(*trainer.sample_batch(data.train))
        model = trainer.model
        it += 1
    run.event(model, event="progressive_done", iterations=it)
    return run.finish(model), run.trace


def run_schedule(model, config: ScheduleConfig, data: DataBundle, plan=None, scores=None, scorer=None,
                 target_kept_fraction=None, criterion="shapley"):
    """Dispatch on ``config.schedule``."""
    if config.schedule == "one_shot":
        return run_one_shot(model, plan, scores, config, data, criterion)
    if config.schedule == "iterative_static":
        return run_iterative_static(model, plan, scores, config, data, criterion)
    if config.schedule == "iterative_dynamic":
        return run_iterative_dynamic(model, plan, config, data, scorer, criterion)
    return run_progressive(model, target_kept_fraction, config, data, scorer, criterion)


def config_dict(config: ScheduleConfig) -> dict:
    return asdict(config)
