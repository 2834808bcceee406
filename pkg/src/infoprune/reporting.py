"""CSV and JSON artifacts.

CSV files start with a ``# seed_model=.. seed_data=.. seed_shapley=..`` comment
line followed by a header row. Floats are written with ``repr`` so every value
reads back bit-exactly.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .shapley import ShapleyReport

STABILITY_FIELDS = ("layer", "batch", "avg_rank", "avg_entropy")
LAYER_FIELDS = ("layer", "avg_rank", "avg_entropy", "rank_scaled", "entropy_scaled", "fusion", "u_i")
SCORE_FIELDS = ("layer", "channel", "score", "std_err", "method", "normalization")
CHECK_FIELDS = ("layer", "method", "score_sum", "grand_value", "abs_error", "passed")
CURVE_FIELDS = ("epoch", "lr", "train_loss", "val_acc", "val_loss")
REPORT_FIELDS = ("run", "schedule", "criterion", "acc", "acc_drop", "flops_drop", "params_drop")

EFFICIENCY_TOL = 1e-9


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def write_csv(path, fieldnames, rows, comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _plain(row.get(k, "")) for k in fieldnames})
    return path


def read_csv(path) -> list:
    with Path(path).open(encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------------------
# row builders
# --------------------------------------------------------------------------


def stability_rows(report):
    return list(report.rows())


def layer_rows(stats, plan=None):
    counts = plan.as_dict() if plan is not None else {}
    return [{"layer": s.layer_index, "avg_rank": s.avg_rank, "avg_entropy": s.avg_entropy,
             "rank_scaled": s.rank_scaled, "entropy_scaled": s.entropy_scaled, "fusion": s.fusion,
             "u_i": counts.get(s.layer_index, "")} for s in stats]


def score_rows(reports: dict):
    rows = []
    for i in sorted(reports):
        rows.extend(reports[i].rows())
    return rows


def efficiency_rows(reports: dict):
    """One check row per exact layer: the scores must sum to the grand-coalition payoff."""
    rows = []
    for i in sorted(reports):
        r = reports[i]
        if r.method != "exact" or r.normalization != "none":
            continue
        total = float(np.sum(r.scores))
        err = abs(total - r.grand_value)
        rows.append({"layer": i, "method": r.method, "score_sum": total, "grand_value": r.grand_value,
                     "abs_error": err, "passed": bool(err <= EFFICIENCY_TOL)})
    return rows


def read_scores(path) -> dict:
    """Score CSV back into ``{layer: ShapleyReport}`` (method and normalization per layer)."""
    rows = read_csv(path)
    if not rows:
        raise FormatError(f"{path}: no score rows")
    by_layer = {}
    try:
        for row in rows:
            by_layer.setdefault(int(row["layer"]), []).append(row)
        out = {}
        for i, rs in by_layer.items():
            rs.sort(key=lambda r: int(r["channel"]))
            if [int(r["channel"]) for r in rs] != list(range(len(rs))):
                raise FormatError(f"{path}: layer {i} channels are not 0..{len(rs) - 1}")
            scores = np.array([float(r["score"]) for r in rs])
            se = None if rs[0]["std_err"] == "" else np.array([float(r["std_err"]) for r in rs])
            out[i] = ShapleyReport(i, scores, rs[0]["method"], 0, None, se, rs[0]["normalization"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed score table ({exc})") from None
    return out


def collect_runs(root) -> list:
    """Report rows for every ``summary.json`` under ``root``, sorted by FLOPs drop (descending)."""
    root = Path(root)
    rows = []
    for p in sorted(root.rglob("summary.json")):
        s = read_json(p)
        rows.append({"run": str(p.parent.relative_to(root)) or ".", "schedule": s.get("schedule"),
                     "criterion": s.get("criterion"), "acc": s.get("pruned_acc"), "acc_drop": s.get("acc_drop"),
                     "flops_drop": s.get("flops_drop_pct"), "params_drop": s.get("params_drop_pct")})
    rows.sort(key=lambda r: (-(r["flops_drop"] or 0.0), r["run"]))
    return rows
