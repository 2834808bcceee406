"""Run configuration: an INI file with one section per pipeline stage.

Every stochastic choice is driven by three seeds: ``model`` (initialisation,
training order, fine-tuning), ``data`` (dataset synthesis, split, probe
sampling) and ``shapley`` (permutation sampling and random baseline scores).

>>> cfg = RunConfig.from_string("[plan]\\nbudget = 0.5\\n")
>>> cfg.plan.budget, cfg.seeds.model
(0.5, 0)
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .info import EPS
from .schedules import SCHEDULES, ScheduleConfig
from .training import LRSchedule


@dataclass
class Seeds:
    model: int = 0
    data: int = 0
    shapley: int = 0

    def header(self) -> str:
        return f"seed_model={self.model} seed_data={self.data} seed_shapley={self.shapley}"


@dataclass
class ModelSpec:
    arch: str = "plainnet"
    widths: tuple = (8, 8, 12, 12, 16, 16)
    blocks_per_stage: int = 2


@dataclass
class DataSpec:
    source: str = "synth"
    path: str = ""
    num_classes: int = 10
    n_per_class: int = 300
    image_size: int = 16
    channels: int = 3
    noise_sigma: float = 0.8
    max_shift: int = 1
    val_fraction: float = 0.25


@dataclass
class TrainSpec:
    epochs: int = 16
    lr: float = 0.02
    decay_epochs: tuple = (8, 12)
    decay_factor: float = 0.1
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 1e-4


@dataclass
class ProbeSpec:
    batch_size: int = 64
    num_batches: int = 8
    stratified: bool = False


@dataclass
class AnalysisSpec:
    low: float = 1.0
    high: float = 10.0
    rel_tol: float = float(EPS)


@dataclass
class PlanSpec:
    budget: float = 0.6
    r_max: float = 0.9
    metric: str = "channels"
    allocation: str = "fusion"


@dataclass
class ShapleySpec:
    perms_per_channel: int = 200
    exact_limit: int = 12
    probe_batches: int = 8


@dataclass
class PruneSpec:
    schedule: str = "iterative_static"
    criterion: str = "shapley"
    finetune_epochs: int = 2
    retrain_epochs: int = 20
    lr: float = 0.01
    retrain_lr: float = 0.01
    retrain_decay_epochs: tuple = (10, 15)
    batch_size: int = 32
    progressive_step: int = 1
    progressive_train_steps: int = 1
    rescore_every: int = 10
    normalization: str = "none"
    target_metric: str = "channels"


SECTIONS = {
    "seeds": Seeds, "model": ModelSpec, "data": DataSpec, "train": TrainSpec, "probe": ProbeSpec,
    "analysis": AnalysisSpec, "plan": PlanSpec, "shapley": ShapleySpec, "prune": PruneSpec,
}

CRITERIA = ("shapley", "random", "rank", "entropy", "l1")


def _parse(kind, raw: str, where: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(float(value)) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    seeds: Seeds = field(default_factory=Seeds)
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    plan: PlanSpec = field(default_factory=PlanSpec)
    shapley: ShapleySpec = field(default_factory=ShapleySpec)
    prune: PruneSpec = field(default_factory=PruneSpec)
    out: str = "runs/default"

    # ------------------------------------------------------------------ io

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, base_dir=None) -> "RunConfig":
        """Typed config from a parsed INI file; relative raw-data paths resolve against ``base_dir``."""
        unknown = [s for s in parser.sections() if s not in SECTIONS and s != "output"]
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}")
        kwargs = {}
        for name, spec in SECTIONS.items():
            values = {}
            if parser.has_section(name):
                known = {f.name: f for f in fields(spec)}
                for key, raw in parser.items(name):
                    if key not in known:
                        raise ConfigError(f"[{name}] unknown key {key!r}")
                    values[key] = _parse(type(known[key].default), raw, f"[{name}] {key}")
            kwargs[name] = spec(**values)
        cfg = cls(**kwargs)
        if parser.has_option("output", "dir"):
            cfg.out = parser.get("output", "dir")
        if base_dir is not None and cfg.data.path and not Path(cfg.data.path).is_absolute():
            cfg.data.path = str((Path(base_dir) / cfg.data.path).resolve())
        cfg.validate()
        return cfg

    @classmethod
    def from_string(cls, text: str, base_dir=None) -> "RunConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_parser(parser, base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_string(path.read_text(encoding="utf-8"), path.parent)

    def to_string(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            lines += [f"{k} = {_format(v)}" for k, v in asdict(getattr(self, name)).items()]
            lines.append("")
        lines += ["[output]", f"dir = {self.out}", ""]
        return "\n".join(lines)

    # ------------------------------------------------------------ checks

    def validate(self) -> None:
        m, d, a, p, pr = self.model, self.data, self.analysis, self.plan, self.prune
        if m.arch not in ("plainnet", "resnet"):
            raise ConfigError(f"[model] arch must be plainnet or resnet, got {m.arch!r}")
        if not m.widths:
            raise ConfigError("[model] widths must be non-empty")
        if d.source not in ("synth", "raw"):
            raise ConfigError(f"[data] source must be synth or raw, got {d.source!r}")
        if d.source == "raw" and not Path(d.path).is_file():
            raise ConfigError(f"[data] raw file {d.path!r} not found")
        if not 0 < d.val_fraction < 1:
            raise ConfigError("[data] val_fraction must lie in (0, 1)")
        if not a.low < a.high:
            raise ConfigError(f"[analysis] need low < high, got {a.low} >= {a.high}")
        if not 0 < p.budget <= 1:
            raise ConfigError(f"[plan] budget must lie in (0, 1], got {p.budget}")
        if not 0 <= p.r_max < 1:
            raise ConfigError(f"[plan] r_max must lie in [0, 1), got {p.r_max}")
        if p.metric not in ("channels", "flops", "params"):
            raise ConfigError(f"[plan] unknown metric {p.metric!r}")
        if p.allocation not in ("fusion", "constant"):
            raise ConfigError(f"[plan] allocation must be fusion or constant, got {p.allocation!r}")
        if pr.criterion not in CRITERIA:
            raise ConfigError(f"[prune] criterion must be one of {CRITERIA}, got {pr.criterion!r}")
        if pr.schedule not in SCHEDULES:
            raise ConfigError(f"[prune] schedule must be one of {SCHEDULES}, got {pr.schedule!r}")
        if min(self.probe.batch_size, self.probe.num_batches, self.shapley.probe_batches, self.train.epochs + 1) < 1:
            raise ConfigError("[probe]/[shapley]/[train] sizes must be positive")
        self.schedule_config()

    def schedule_config(self) -> ScheduleConfig:
        pr = self.prune
        return ScheduleConfig(
            schedule=pr.schedule, finetune_epochs=pr.finetune_epochs, retrain_epochs=pr.retrain_epochs,
            lr=LRSchedule(pr.lr), retrain_lr=LRSchedule(pr.retrain_lr, pr.retrain_decay_epochs),
            batch_size=pr.batch_size, momentum=self.train.momentum, weight_decay=self.train.weight_decay,
            seed=self.seeds.model, progressive_step=pr.progressive_step,
            progressive_train_steps=pr.progressive_train_steps, rescore_every=pr.rescore_every,
            normalization=pr.normalization, target_metric=pr.target_metric)
