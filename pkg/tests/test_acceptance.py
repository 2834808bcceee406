"""Acceptance criteria A1-A10.

Every test records one PASS/FAIL line, printed together at the end of the
module. The toy model (configs/acceptance.ini) is trained once per session.
"""
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from gradcheck import CASES
from infoprune import experiments as ex
from infoprune.config import RunConfig
from infoprune.costs import count_costs
from infoprune.datasets import synth_blobs, train_val_split
from infoprune.graph import ChannelMask, masked_forward
from infoprune.info import PrunePlan, allocate_prune_counts, fuse
from infoprune.schedules import (DataBundle, ScheduleConfig, global_argmin, run_iterative_dynamic,
                                 run_iterative_static, run_one_shot, run_progressive)
from infoprune.scorers import FilterNormScorer, RandomScorer, ShapleyScorer, score_layers
from infoprune.shapley import exact_shapley, make_game, sampled_shapley
from infoprune.surgery import rewrite_model
from infoprune.zoo import build_plainnet, build_resnet_mini

pytestmark = pytest.mark.acceptance

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini"
SEEDS = range(5)
RESULTS = {}


def record(name, ok, detail, started):
    RESULTS[name] = (bool(ok), f"{detail} [{time.perf_counter() - started:.1f}s]")
    print(f"{name} {'PASS' if ok else 'FAIL'}: {RESULTS[name][1]}")
    return ok


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    write = tr.write_line if tr else print
    write("")
    write("acceptance summary")
    for name in sorted(RESULTS, key=lambda k: int(k[1:])):
        ok, detail = RESULTS[name]
        write(f"  {name} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    cfg = RunConfig.load(CONFIG)
    return ex.toy_setup(cfg, tmp_path_factory.mktemp("toy") / "model.ckpt")


# A1 -----------------------------------------------------------------------

def test_a1_gradients():
    t0 = time.perf_counter()
    worst = {}
    for op, case in sorted(CASES.items()):
        rng = np.random.default_rng(zlib.crc32(op.encode()) + 1)
        worst[op] = max(case(rng) for _ in range(20))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert record("A1", ok, f"20 cases per op, worst relative error: {detail}", t0)


# A2 -----------------------------------------------------------------------

def duplicate_and_null(c=12, seed=3):
    """First conv with channel 1 a copy of channel 0 (filter and consumer slice) and channel c-1 zero."""
    m = build_plainnet([c, 6], 4, (3, 8, 8), seed=seed)
    conv, nxt = m.layers[0], m.layers[2]
    conv.weight[1], conv.bias[1] = conv.weight[0], conv.bias[0]
    nxt.weight[:, 1] = nxt.weight[:, 0]
    conv.weight[c - 1], conv.bias[c - 1] = 0.0, 0.0
    return m


def test_a2_axioms(toy):
    t0 = time.perf_counter()
    probe = synth_blobs(4, 8, 8, seed=5)
    errs = {"efficiency": 0.0, "symmetry": 0.0, "null": 0.0}
    for c in (6, 12):
        g = make_game(duplicate_and_null(c), 0, probe)
        r = exact_shapley(g)
        errs["efficiency"] = max(errs["efficiency"], abs(r.scores.sum() - g.grand_value))
        errs["symmetry"] = max(errs["symmetry"], abs(r.scores[0] - r.scores[1]))
        errs["null"] = max(errs["null"], abs(r.scores[c - 1]))
    for layer in toy.layers[:3]:  # trained layers with 8, 8 and 12 channels
        g = make_game(toy.model, layer, toy.batches[0])
        r = exact_shapley(g)
        errs["efficiency"] = max(errs["efficiency"], abs(r.scores.sum() - g.grand_value))
    ok = max(errs.values()) <= 1e-9 and time.perf_counter() - t0 < 120
    assert record("A2", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()), t0)


# A3 -----------------------------------------------------------------------

def test_a3_estimator_convergence(toy):
    t0 = time.perf_counter()
    layer = next(i for i in toy.layers if toy.model.layers[i].out_channels == 8 and i > 0)
    g = make_game(toy.model, layer, toy.batches[0])
    exact = exact_shapley(g).scores
    within, improved, worst_z = 0, 0, 0.0
    for seed in SEEDS:
        a = sampled_shapley(g, 2000, seed=seed)
        b = sampled_shapley(g, 8000, seed=seed)
        z = np.abs(a.scores - exact) / a.std_err
        worst_z = max(worst_z, float(z.max()))
        within += bool(np.all(z <= 3))
        improved += np.mean(np.abs(b.scores - exact)) < np.mean(np.abs(a.scores - exact))
    ok = within == len(SEEDS) and improved >= 4 and time.perf_counter() - t0 < 300
    assert record("A3", ok, f"layer {layer}: within 3 std_err on {within}/5 seeds (max z {worst_z:.2f}); "
                            f"MAE(8000) < MAE(2000) on {improved}/5", t0)


# A4 -----------------------------------------------------------------------

def test_a4_batch_stability(toy):
    t0 = time.perf_counter()
    rows = ex.stability_rows(toy, [toy.cfg.seeds.data])
    rank = max(r["rank_spread"] for r in rows)
    ent = max(r["entropy_spread"] for r in rows)
    worst = max(rows, key=lambda r: max(r["rank_spread"], r["entropy_spread"]))
    ok = rank <= 0.05 and ent <= 0.05 and time.perf_counter() - t0 < 120
    assert record("A4", ok, f"8 x 64 images; max rank spread {100 * rank:.2f}%, max entropy spread "
                            f"{100 * ent:.2f}% (worst layer {worst['layer']})", t0)


# A5 -----------------------------------------------------------------------

def test_a5_criterion_ordering(toy):
    t0 = time.perf_counter()
    rows = ex.compare_criteria(toy, SEEDS, ("shapley", "random"))
    shap = [r for r in rows if r["criterion"] == "shapley"]
    won = ex.wins(rows, "criterion", "shapley", "random")
    drop = float(np.mean([r["acc_drop"] for r in shap]))
    pruned = sum(shap[0]["prune_counts"]) / sum(s.channels for s in toy.stats)
    elapsed = time.perf_counter() - t0
    ok = toy.baseline_acc >= 95 and won >= 4 and drop <= 2 and elapsed < 900
    accs = " ".join(f"{r['acc']:.2f}" for r in rows)
    assert record("A5", ok, f"baseline {toy.baseline_acc:.2f}%, {100 * pruned:.1f}% channels pruned; shapley >= "
                            f"random on {won}/5; mean drop {drop:.2f}; (shapley, random) per seed: {accs}", t0)


# A6 -----------------------------------------------------------------------

def test_a6_allocation_vs_constant(toy):
    t0 = time.perf_counter()
    rows = ex.compare_allocations(toy, SEEDS)
    kept = {r["allocation"]: r["kept_flops"] for r in rows}
    matched = abs(kept["fusion"] - kept["constant"]) <= 0.01 * kept["fusion"]
    won = ex.wins(rows, "allocation", "fusion", "constant")
    elapsed = time.perf_counter() - t0
    ok = matched and won >= 3 and elapsed < 1200
    accs = " ".join(f"{r['acc']:.2f}" for r in rows)
    assert record("A6", ok, f"kept FLOPs fusion {kept['fusion']:.4f} vs constant {kept['constant']:.4f}; "
                            f"fusion >= constant on {won}/5; (fusion, constant) per seed: {accs}", t0)


# A7 -----------------------------------------------------------------------

def test_a7_fusion_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad_range = bad_monotone = 0
    for _ in range(100):
        n = int(rng.integers(3, 13))
        ranks, ents = rng.uniform(0.5, 30, n), rng.uniform(0.01, 0.5, n)
        for v in fuse(ranks, ents):
            bad_range += not (v.min() == 1.0 and v.max() == 10.0 and np.all((v >= 1) & (v <= 10)))
        fusion = fuse(ranks, ents)[2]
        plan = allocate_prune_counts(fusion, [16] * n, rng.uniform(0.3, 0.95), 0.9)
        u = np.asarray(plan.prune_counts)
        order = np.argsort(fusion)
        bad_monotone += bool(np.any(np.diff(u[order]) > 0))
    ok = bad_range == 0 and bad_monotone == 0 and time.perf_counter() - t0 < 10
    assert record("A7", ok, f"100 stat vectors: {bad_range} range violations, {bad_monotone} monotonicity "
                            f"violations", t0)


# A8 -----------------------------------------------------------------------

def test_a8_structural_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    models = [build_plainnet([6, 8, 8, 10], 5, (3, 8, 8), seed=1), build_resnet_mini([6, 8], 2, 5, (3, 8, 8), seed=2)]
    worst = 0.0
    for k in range(20):
        m = models[k % 2]
        masks = []
        for i in m.prunable_layers():
            bits = rng.random(m.layers[i].out_channels) < 0.6
            bits[rng.integers(bits.size)] = True
            masks.append(ChannelMask(i, bits))
        x = rng.standard_normal((100, 3, 8, 8))
        ref, _ = masked_forward(m, x, masks)
        got, _ = masked_forward(rewrite_model(m, masks), x)
        worst = max(worst, float(np.max(np.abs(ref - got))))
    ok = worst <= 1e-6 and time.perf_counter() - t0 < 60
    assert record("A8", ok, f"20 mask patterns x 100 inputs, max |logit difference| {worst:.1e}", t0)


# A9 -----------------------------------------------------------------------

# (model, MACs, params); every conv is 3x3 with "same" padding.
HAND = [
    # conv 3->8 @32x32: 221,184 / 224; conv 8->16 @32x32: 1,179,648 / 1,168; pool; dense 4096->10: 40,960 / 40,970
    (lambda: build_plainnet([8, 16], 10, (3, 32, 32)), 1_441_792, 42_362),
    # conv 1->4 @4x4: 576 / 40; dense 64->2: 128 / 130
    (lambda: build_plainnet([4], 2, (1, 4, 4), pool_every=0), 704, 170),
    # conv 3->6 @8x8: 10,368 / 168; conv 6->6 @4x4: 5,184 / 330; conv 6->6 @2x2: 1,296 / 330; dense 6->3: 18 / 21
    (lambda: build_plainnet([6, 6, 6], 3, (3, 8, 8), pool_every=1), 16_866, 849),
    # stem 3->4 @8x8: 6,912 / 112; two 4->4 convs @8x8: 18,432 / 296; GAP; dense 4->2: 8 / 10
    (lambda: build_resnet_mini([4], 1, 2, (3, 8, 8)), 25_352, 418),
    # as above plus a stride-2 block: conv 4->8 @4x4: 4,608 / 296; conv 8->8 @4x4: 9,216 / 584; dense 8->10: 80 / 90
    (lambda: build_resnet_mini([4, 8], 1, 10, (3, 8, 8)), 39_248, 1_378),
]


def test_a9_cost_accounting():
    t0 = time.perf_counter()
    mismatches = [(k, count_costs(b()).total_flops, count_costs(b()).total_params)
                  for k, (b, f, p) in enumerate(HAND)
                  if (count_costs(b()).total_flops, count_costs(b()).total_params) != (f, p)]
    tr, va = train_val_split(synth_blobs(4, 10, 8, seed=0), 0.25, 0)
    m = build_plainnet([6, 8, 8], 4, (3, 8, 8), seed=0)
    plan = PrunePlan(m.prunable_layers(), [6, 8, 8], [2, 3, 5], [1.0] * 3, "channels", 1.0, 1.0, 0.9)
    scores = score_layers(m, plan.layers, FilterNormScorer())
    pruned, trace = run_one_shot(m, plan, scores, ScheduleConfig(finetune_epochs=0, retrain_epochs=0),
                                 DataBundle(tr, va))
    before, after = count_costs(m), count_costs(pruned)
    s = trace.summary
    trace_ok = (s["flops_drop_pct"] == 100.0 * (1 - after.total_flops / before.total_flops)
                and s["params_drop_pct"] == 100.0 * (1 - after.total_params / before.total_params))
    ok = not mismatches and trace_ok and time.perf_counter() - t0 < 10
    assert record("A9", ok, f"{len(HAND) - len(mismatches)}/{len(HAND)} architectures exact; trace drops "
                            f"{'match' if trace_ok else 'differ from'} recount", t0)


# A10 ----------------------------------------------------------------------

def structure(m):
    return [(type(layer).__name__, getattr(layer, "weight", np.empty(0)).shape) for layer in m.layers]


def test_a10_schedule_contracts():
    t0 = time.perf_counter()
    tr, va = train_val_split(synth_blobs(4, 12, 8, noise_sigma=0.3, seed=0), 0.25, 0)
    data = DataBundle(tr, va)
    frozen = ScheduleConfig(finetune_epochs=0, retrain_epochs=0)
    same = True
    for seed in range(3):
        m = build_plainnet([5, 6, 6], 4, (3, 8, 8), seed=seed)
        layers = m.prunable_layers()
        plan = PrunePlan(layers, [5, 6, 6], [1 + seed % 2, 2, 3], [1.0] * 3, "channels", 1.0, 1.0, 0.9)
        scorer = RandomScorer(seed)
        scores = score_layers(m, layers, scorer)
        a, _ = run_one_shot(m, plan, scores, frozen, data)
        b, _ = run_iterative_static(m, plan, scores, frozen, data)
        c, _ = run_iterative_dynamic(m, plan, frozen, data, scorer)
        same &= structure(a) == structure(b) == structure(c)

    # progressive: each removal must be the global minimum of freshly computed scores
    m = build_plainnet([5, 6, 6], 4, (3, 8, 8), seed=4)
    probe = tr.subset(np.arange(16))
    replay_ok = True
    n_removed = 0
    for scorer in (FilterNormScorer(), ShapleyScorer(probe, 0, 10, 6)):
        cfg = ScheduleConfig(schedule="progressive", finetune_epochs=0, retrain_epochs=0,
                             progressive_train_steps=0, rescore_every=1)
        _, trace = run_progressive(m, 11 / 17, cfg, data, scorer)
        cur = m
        for e in (e for e in trace.events if e["event"] == "remove"):
            fresh = {i: np.asarray(getattr(scorer(cur, i), "scores", scorer(cur, i)), dtype=float)
                     for i in cur.prunable_layers()}
            layer, pos, score = global_argmin(fresh, [i for i in fresh if fresh[i].size > 1])
            cands = sorted((float(v), i, j) for i, s in fresh.items() if s.size > 1 for j, v in enumerate(s))
            replay_ok &= (layer, pos, score) == (e["layer"], e["position"], e["score"]) == (cands[0][1],
                                                                                          cands[0][2], cands[0][0])
            cur = rewrite_model(cur, [ChannelMask.from_pruned(layer, cur.layers[layer].out_channels, [pos])])
            n_removed += 1
    ok = same and replay_ok and n_removed == 12 and time.perf_counter() - t0 < 300
    assert record("A10", ok, f"schedules structurally {'identical' if same else 'different'}; "
                             f"{n_removed} progressive removals {'match' if replay_ok else 'differ from'} "
                             f"the global-argmin replay", t0)
