"""Argument handling shared by the experiment scripts."""
import argparse
from pathlib import Path

from infoprune import experiments
from infoprune.config import RunConfig

ROOT = Path(__file__).resolve().parents[1]


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(ROOT / "configs" / "acceptance.ini"))
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    p.add_argument("--out", default=None, help="output directory (default: [output] dir of the config)")
    return p


def setup(args):
    cfg = RunConfig.load(args.config)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    toy = experiments.toy_setup(cfg, out / "model.ckpt")
    print(f"model: validation accuracy {toy.baseline_acc:.2f}% (checkpoint {out / 'model.ckpt'})", flush=True)
    return toy, out
