"""Command-line front end: ``infoprune {train,analyze,plan,shapley,prune,report}``.

Exit codes: 0 success, 2 input or configuration error, 3 infeasible plan or
nothing to report, 4 internal numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import DegenerateLayerError, InfoPruneError, PlanningError
from .info import LayerInfoStats, PrunePlan
from .reporting import (CHECK_FIELDS, CURVE_FIELDS, LAYER_FIELDS, REPORT_FIELDS, SCORE_FIELDS, STABILITY_FIELDS,
                        collect_runs, efficiency_rows, layer_rows, read_json, read_scores, score_rows,
                        stability_rows, write_csv, write_json)
from .schedules import DataBundle, config_dict
from .training import evaluate

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for name in ("model", "data", "shapley"):
        v = getattr(args, f"seed_{name}")
        if v is not None:
            setattr(cfg.seeds, name, v)
    if args.out:
        cfg.out = args.out
    return cfg


def _path(value, default: Path, what: str, required=True) -> Path | None:
    p = Path(value) if value else default
    if not p.is_file():
        if required:
            raise CommandError(f"{what} {p} not found")
        return None
    return p


def _load_stats(path) -> list:
    d = read_json(path)
    return [LayerInfoStats(**s) for s in d["layers"]]


def _load_plan(path, model) -> PrunePlan:
    plan = PrunePlan.from_json(read_json(path))
    for i, c in zip(plan.layers, plan.channels):
        if i >= len(model.layers) or getattr(model.layers[i], "out_channels", None) != c:
            raise CommandError(f"plan layer {i} with {c} channels does not match the checkpoint")
    return plan


def _check_finite(values, what):
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise CommandError(f"non-finite {what}", EXIT_NUMERIC)


def _say(msg):
    print(msg, flush=True)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> Path:
    out = Path(cfg.out)
    train, val = pipeline.load_data(cfg)
    history = []
    model = pipeline.train_model(cfg, train, val, history)
    _check_finite([h["train_loss"] for h in history], "training loss")
    ckpt = save_checkpoint(model, out / "model.ckpt")
    write_csv(out / "train_curve.csv", CURVE_FIELDS, history, cfg.seeds.header())
    (out / "config.ini").write_text(cfg.to_string(), encoding="utf-8")
    acc = history[-1]["val_acc"] if history else evaluate(model, val)[0]
    _say(f"trained {cfg.model.arch} {list(cfg.model.widths)}: val accuracy {acc:.4f} -> {ckpt}")
    return ckpt


def cmd_analyze(cfg: RunConfig, args):
    out = Path(cfg.out)
    model = load_checkpoint(_path(args.checkpoint, out / "model.ckpt", "checkpoint"))
    train, _ = pipeline.load_data(cfg)
    stats, stab = pipeline.analyze(cfg, model, pipeline.probe_batches(cfg, train))
    _check_finite([s.fusion for s in stats], "fusion values")
    header = cfg.seeds.header()
    write_csv(out / "stability.csv", STABILITY_FIELDS, stability_rows(stab), header)
    write_csv(out / "layers.csv", LAYER_FIELDS, layer_rows(stats), header)
    write_json(out / "stats.json", {"seeds": vars(cfg.seeds), "layers": [vars(s) for s in stats],
                                    "rank_spread": stab.rank_spread, "entropy_spread": stab.entropy_spread})
    for s, rs, es in zip(stats, stab.rank_spread, stab.entropy_spread):
        _say(f"layer {s.layer_index:3d}: rank {s.avg_rank:.4f} entropy {s.avg_entropy:.5f} "
             f"fusion {s.fusion:.3f} (spread {100 * rs:.2f}% / {100 * es:.2f}%)")
    return stats


def cmd_plan(cfg: RunConfig, args):
    out = Path(cfg.out)
    stats = _load_stats(_path(args.stats, out / "stats.json", "stats file"))
    ckpt = _path(args.checkpoint, out / "model.ckpt", "checkpoint", required=cfg.plan.metric != "channels")
    model = load_checkpoint(ckpt) if ckpt else None
    try:
        plan = pipeline.make_plan(cfg, stats, model)
    except PlanningError as exc:
        raise CommandError(f"{exc} (tightest feasible budget {exc.tightest:.4f})", EXIT_INFEASIBLE) from None
    plan.meta["seeds"] = vars(cfg.seeds)
    write_json(out / "plan.json", plan.to_json())
    write_csv(out / "layers.csv", LAYER_FIELDS, layer_rows(stats, plan), cfg.seeds.header())
    _say(f"plan ({plan.metric}): prune {plan.prune_counts} of {plan.channels}; "
         f"kept {plan.achieved:.4f} (target {plan.target})")
    return plan


def cmd_shapley(cfg: RunConfig, args):
    out = Path(cfg.out)
    model = load_checkpoint(_path(args.checkpoint, out / "model.ckpt", "checkpoint"))
    plan_path = _path(args.plan, out / "plan.json", "plan", required=bool(args.plan))
    layers = model.prunable_layers()
    if plan_path:
        layers = [i for i, u in _load_plan(plan_path, model).as_dict().items() if u > 0]
    train, _ = pipeline.load_data(cfg)
    reports = pipeline.shapley_scores(cfg, model, layers, pipeline.probe_batches(cfg, train))
    for r in reports.values():
        _check_finite(r.scores, f"Shapley scores of layer {r.layer_index}")
    header = cfg.seeds.header()
    write_csv(out / "scores.csv", SCORE_FIELDS, score_rows(reports), header)
    checks = efficiency_rows(reports)
    write_csv(out / "shapley_checks.csv", CHECK_FIELDS, checks, header)
    for i, r in sorted(reports.items()):
        _say(f"layer {i:3d}: {r.method} ({len(r.scores)} channels), lowest {int(np.argmin(r.scores))}")
    if not all(c["passed"] for c in checks):
        raise CommandError("efficiency check failed for an exact layer", EXIT_NUMERIC)
    return reports


def cmd_prune(cfg: RunConfig, args):
    out = Path(cfg.out)
    model = load_checkpoint(_path(args.checkpoint, out / "model.ckpt", "checkpoint"))
    schedule = cfg.prune.schedule
    plan = None
    if schedule != "progressive":
        plan = _load_plan(_path(args.plan, out / "plan.json", "plan"), model)
    scores = None
    if schedule in ("one_shot", "iterative_static") and cfg.prune.criterion == "shapley":
        scores = read_scores(_path(args.scores, out / "scores.csv", "score table"))
    train, val = pipeline.load_data(cfg)
    batches = pipeline.probe_batches(cfg, train)
    try:
        pruned, trace = pipeline.prune(cfg, model, DataBundle(train, val), batches, plan, scores)
    except PlanningError as exc:
        raise CommandError(str(exc), EXIT_INFEASIBLE) from None
    trace.summary["seeds"] = vars(cfg.seeds)
    trace.summary["config"] = config_dict(cfg.schedule_config())
    trace.write(out)
    save_checkpoint(pruned, out / "pruned.ckpt")
    s = trace.summary
    _say(f"{schedule}/{cfg.prune.criterion}: accuracy {s['pruned_acc']:.2f}% (drop {s['acc_drop']:.2f}), "
         f"FLOPs -{s['flops_drop_pct']:.1f}%, params -{s['params_drop_pct']:.1f}%")
    return pruned, trace


def cmd_report(cfg: RunConfig, args):
    root = Path(args.run_dir)
    if not root.is_dir():
        raise CommandError(f"run directory {root} not found")
    rows = collect_runs(root)
    if not rows:
        raise CommandError(f"no completed runs (summary.json) under {root}", EXIT_INFEASIBLE)
    dest = Path(args.out) / "report.csv" if args.out else root / "report.csv"
    write_csv(dest, REPORT_FIELDS, rows)
    for r in rows:
        _say(f"{r['run']:30s} {r['schedule']:18s} {r['criterion']:8s} acc {r['acc']:.2f} "
             f"drop {r['acc_drop']:.2f} flops -{r['flops_drop']:.1f}% params -{r['params_drop']:.1f}%")
    return rows


COMMANDS = {"train": cmd_train, "analyze": cmd_analyze, "plan": cmd_plan, "shapley": cmd_shapley,
            "prune": cmd_prune, "report": cmd_report}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--seed-model", type=int)
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-shapley", type=int)
    common.add_argument("--threads", type=int, help="cap BLAS threads")

    parser = argparse.ArgumentParser(prog="infoprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the configured model")
    p = sub.add_parser("analyze", parents=[common], help="rank/entropy statistics and fusion")
    p.add_argument("--checkpoint")
    p = sub.add_parser("plan", parents=[common], help="per-layer prune counts from statistics")
    p.add_argument("--stats")
    p.add_argument("--checkpoint")
    p = sub.add_parser("shapley", parents=[common], help="per-channel Shapley scores")
    p.add_argument("--checkpoint")
    p.add_argument("--plan")
    p = sub.add_parser("prune", parents=[common], help="run the configured pruning schedule")
    p.add_argument("--checkpoint")
    p.add_argument("--plan")
    p.add_argument("--scores")
    p = sub.add_parser("report", parents=[common], help="collect run summaries into one table")
    p.add_argument("run_dir")
    return parser


def _threads(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise CommandError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        with _threads(args.threads), np.errstate(over="raise", invalid="raise", divide="ignore"):
            COMMANDS[args.command](cfg, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (PlanningError, DegenerateLayerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InfoPruneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
