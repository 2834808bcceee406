"""Batch-to-batch spread of per-layer average rank and entropy on the toy model.

Writes ``stability_seeds.csv`` (one row per data seed and layer) for both
plain random and class-stratified probe batches.
"""
from dataclasses import replace

from _common import parser, setup

from infoprune import experiments
from infoprune.reporting import write_csv

FIELDS = ("stratified", "seed", "layer", "batches", "batch_size", "rank_spread", "entropy_spread")


def main():
    args = parser(__doc__.splitlines()[0]).parse_args()
    toy, out = setup(args)
    rows = []
    for stratified in (False, True):
        cfg = replace(toy.cfg, probe=replace(toy.cfg.probe, stratified=stratified))
        for r in experiments.stability_rows(replace(toy, cfg=cfg), range(args.seeds)):
            rows.append({"stratified": stratified, **r})
    write_csv(out / "stability_seeds.csv", FIELDS, rows, toy.cfg.seeds.header())
    for stratified in (False, True):
        sel = [r for r in rows if r["stratified"] == stratified]
        print(f"{'stratified' if stratified else 'random':10s} batches:")
        for layer in sorted({r["layer"] for r in sel}):
            lr = [r for r in sel if r["layer"] == layer]
            print(f"  layer {layer:3d}: worst rank spread {100 * max(r['rank_spread'] for r in lr):5.2f}%  "
                  f"worst entropy spread {100 * max(r['entropy_spread'] for r in lr):5.2f}%")


if __name__ == "__main__":
    main()
