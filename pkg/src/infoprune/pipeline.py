"""Library-level pipeline stages driven by a RunConfig.

The command-line front end is a thin shell over these functions, so calling
them directly reproduces its artifacts exactly.
"""
from __future__ import annotations

from .config import RunConfig
from .datasets import concat, read_raw, sample_probe_batches, synth_blobs, train_val_split
from .errors import ConfigError
from .info import allocate_prune_counts, analyze_layers, constant_ratio_plan, stability_report
from .schedules import DataBundle, run_schedule
from .scorers import make_scorer, score_layers
from .shapley import layer_channel_costs, normalize_scores, shapley_for_layer
from .training import LRSchedule, Trainer, evaluate
from .zoo import build_plainnet, build_resnet_mini


def load_data(cfg: RunConfig):
    """``(train, val)`` split of the configured dataset."""
    d = cfg.data
    if d.source == "raw":
        ds = read_raw(d.path)
    else:
        ds = synth_blobs(d.num_classes, d.n_per_class, d.image_size, d.noise_sigma, cfg.seeds.data,
                         d.channels, d.max_shift)
    return train_val_split(ds, d.val_fraction, cfg.seeds.data)


def build_model(cfg: RunConfig, train):
    shape, k = train.image_shape, train.class_count
    if cfg.model.arch == "plainnet":
        return build_plainnet(cfg.model.widths, k, shape, seed=cfg.seeds.model)
    return build_resnet_mini(cfg.model.widths, cfg.model.blocks_per_stage, k, shape, seed=cfg.seeds.model)


def train_model(cfg: RunConfig, train, val, history: list | None = None):
    """Train a freshly initialised model; ``history`` collects one dict per epoch."""
    t = cfg.train
    trainer = Trainer(build_model(cfg, train), LRSchedule(t.lr, t.decay_epochs, t.decay_factor), t.batch_size,
                      t.momentum, t.weight_decay, cfg.seeds.model)
    for epoch in range(t.epochs):
        lr = trainer.schedule.at(epoch)
        loss = trainer.run_epoch(train)
        if history is not None:
            acc, val_loss = evaluate(trainer.model, val)
            history.append({"epoch": epoch + 1, "lr": lr, "train_loss": loss, "val_acc": acc, "val_loss": val_loss})
    return trainer.model


def probe_batches(cfg: RunConfig, train) -> list:
    return sample_probe_batches(train, cfg.probe.batch_size, cfg.probe.num_batches, cfg.seeds.data,
                                cfg.probe.stratified)


def shapley_probe(cfg: RunConfig, batches):
    """The first ``shapley.probe_batches`` probe batches, concatenated."""
    return concat(batches[:cfg.shapley.probe_batches])


def analyze(cfg: RunConfig, model, batches):
    """``(layer stats, stability report)`` over the prunable layers."""
    a = cfg.analysis
    stats = analyze_layers(model, batches, rel_tol=a.rel_tol, low=a.low, high=a.high)
    return stats, stability_report(model, batches, a.rel_tol)


def make_plan(cfg: RunConfig, stats, model):
    p = cfg.plan
    layers = [s.layer_index for s in stats]
    channels = [s.channels for s in stats]
    if p.allocation == "constant":
        return constant_ratio_plan(channels, p.budget, p.r_max, p.metric, model, layers)
    return allocate_prune_counts([s.fusion for s in stats], channels, p.budget, p.r_max, p.metric, model, layers,
                                 cfg.analysis.high)


def shapley_scores(cfg: RunConfig, model, layers, batches) -> dict:
    """``{layer: ShapleyReport}``, normalised per ``prune.normalization``."""
    probe = shapley_probe(cfg, batches)
    mode = cfg.prune.normalization
    out = {}
    for i in layers:
        rep = shapley_for_layer(model, i, probe, cfg.seeds.shapley, cfg.shapley.perms_per_channel,
                                cfg.shapley.exact_limit)
        costs = None if mode == "none" else layer_channel_costs(model, i, mode)
        out[i] = normalize_scores(rep, mode, costs)
    return out


def criterion_scorer(cfg: RunConfig, batches):
    return make_scorer(cfg.prune.criterion, shapley_probe(cfg, batches), cfg.seeds.shapley,
                       cfg.shapley.perms_per_channel, cfg.shapley.exact_limit)


def criterion_scores(cfg: RunConfig, model, layers, batches) -> dict:
    if cfg.prune.criterion == "shapley":
        return shapley_scores(cfg, model, layers, batches)
    return score_layers(model, layers, criterion_scorer(cfg, batches))


def prune(cfg: RunConfig, model, data: DataBundle, batches, plan=None, scores=None):
    """Run the configured schedule; static schedules need ``plan`` and ``scores``."""
    sched = cfg.schedule_config()
    if sched.schedule in ("one_shot", "iterative_static", "iterative_dynamic") and plan is None:
        raise ConfigError(f"schedule {sched.schedule} needs a plan")
    if sched.schedule in ("one_shot", "iterative_static") and scores is None:
        layers = [i for i, u in plan.as_dict().items() if u > 0]
        scores = criterion_scores(cfg, model, layers, batches)
    scorer = criterion_scorer(cfg, batches)
    return run_schedule(model, sched, data, plan=plan, scores=scores, scorer=scorer,
                        target_kept_fraction=cfg.plan.budget, criterion=cfg.prune.criterion)
