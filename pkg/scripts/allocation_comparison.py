"""Fusion-allocated vs. FLOPs-matched constant-ratio plans on the toy model.

Writes ``allocation.csv`` with one row per (seed, allocation).
"""
from _common import parser, setup

from infoprune import experiments
from infoprune.reporting import write_csv

FIELDS = ("seed", "allocation", "acc", "kept_flops", "prune_counts")


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--criterion", default="shapley", choices=("shapley", "l1"))
    args = p.parse_args()
    toy, out = setup(args)
    rows = experiments.compare_allocations(toy, range(args.seeds), args.criterion)
    write_csv(out / "allocation.csv", FIELDS, rows, toy.cfg.seeds.header())
    for r in rows:
        print(f"seed {r['seed']} {r['allocation']:8s} acc {r['acc']:.2f} kept FLOPs {r['kept_flops']:.4f} "
              f"prune {r['prune_counts']}")
    kept = {r["allocation"]: r["kept_flops"] for r in rows}
    if abs(kept["fusion"] - kept["constant"]) > 0.01 * kept["fusion"]:
        print(f"warning: kept FLOPs differ by more than 1% ({kept['fusion']:.4f} vs {kept['constant']:.4f}); "
              "the model is too small for a close match")
    print(f"fusion >= constant on {experiments.wins(rows, 'allocation', 'fusion', 'constant')}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
