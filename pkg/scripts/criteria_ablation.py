"""Compare pruning criteria under the iterative-static schedule on the toy model.

Writes ``criteria.csv`` with one row per (seed, criterion).
"""
from _common import parser, setup

from infoprune import experiments
from infoprune.reporting import write_csv

FIELDS = ("seed", "criterion", "acc", "acc_drop", "flops_drop", "params_drop")


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--criteria", default="shapley,random,l1")
    args = p.parse_args()
    toy, out = setup(args)
    criteria = tuple(args.criteria.split(","))
    rows = experiments.compare_criteria(toy, range(args.seeds), criteria)
    write_csv(out / "criteria.csv", FIELDS, rows, toy.cfg.seeds.header())
    for r in rows:
        print(f"seed {r['seed']} {r['criterion']:8s} acc {r['acc']:.2f} (drop {r['acc_drop']:.2f})")
    for other in criteria[1:]:
        print(f"{criteria[0]} >= {other} on {experiments.wins(rows, 'criterion', criteria[0], other)}"
              f"/{args.seeds} seeds")


if __name__ == "__main__":
    main()
