import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from infoprune.datasets import sample_probe_batches, synth_blobs
from infoprune.errors import InputError, PlanningError
from infoprune.info import (PrunePlan, allocate_prune_counts, analyze_layers, channel_rank, constant_ratio_plan,
                            fuse, layer_average_rank, layer_entropy, minmax_scale, stability_report)
from infoprune.zoo import build_plainnet
from oracles import allocation_by_scan, fusion_by_hand, gaussian_elimination_rank

LN2_HALF = np.log(2) / 2

finite = st.floats(-50, 50, allow_nan=False)


# rank ---------------------------------------------------------------------

def test_rank_small_cases():
    assert channel_rank(np.ones((3, 3))) == 1
    assert channel_rank(np.eye(3)) == 3
    assert channel_rank(np.zeros((4, 4))) == 0


def test_rank_two_outer_products(rng):
    u1, u2, v1, v2 = rng.standard_normal((4, 5))
    a = np.outer(u1, v1) + np.outer(u2, v2)
    assert channel_rank(a) == gaussian_elimination_rank(a) == 2


def test_rank_matches_elimination_oracle(rng):
    for r in range(1, 6):
        a = rng.standard_normal((6, r)) @ rng.standard_normal((r, 7))
        assert channel_rank(a) == gaussian_elimination_rank(a) == r


def test_average_rank_examples():
    assert layer_average_rank(np.ones((4, 3, 5, 5))) == 1.0
    assert layer_average_rank(np.zeros((2, 2, 3, 3))) == 0.0
    acts = np.zeros((3, 2, 3, 3))
    acts[:, 0] = np.eye(3)
    acts[:, 1] = 1.0
    assert layer_average_rank(acts) == 2.0


def test_average_rank_is_batch_count_invariant(rng):
    acts = rng.standard_normal((2, 3, 4, 4))
    acts[:, 1, 0] = 0.0
    assert layer_average_rank(acts) == layer_average_rank(np.concatenate([acts] * 3))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_average_rank_permutation_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    acts = np.maximum(rng.standard_normal((4, 3, 5, 6)), 0) * (rng.random((4, 3, 1, 1)) < 0.8)
    base = layer_average_rank(acts)
    assert 0 <= base <= 5
    assert layer_average_rank(acts[rng.permutation(4)]) == base
    assert layer_average_rank(acts[:, rng.permutation(3)]) == base


# entropy ------------------------------------------------------------------

def test_entropy_uniform_channels():
    assert layer_entropy(np.ones((2, 2, 3, 3))) == pytest.approx(LN2_HALF, abs=1e-12)
    assert layer_entropy(np.full((1, 4, 2, 2), 7.0)) == pytest.approx(np.log(4) / 4, abs=1e-12)


def test_entropy_saturates():
    acts = np.zeros((1, 3, 2, 2))
    acts[:, 1] = 1e3
    assert layer_entropy(acts) == pytest.approx(0.0, abs=1e-6)


@settings(deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 6), st.just(2), st.just(2)), elements=finite),
       st.floats(-100, 100, allow_nan=False))
def test_entropy_shift_invariant_and_bounded(acts, shift):
    c = acts.shape[1]
    h = layer_entropy(acts)
    assert -1e-12 <= h <= np.log(c) / c + 1e-12
    assert layer_entropy(acts + shift) == pytest.approx(h, abs=1e-9)


# scaling and fusion -------------------------------------------------------

def test_minmax_examples():
    np.testing.assert_allclose(minmax_scale([2, 6, 10]), [1, 5.5, 10])
    np.testing.assert_allclose(minmax_scale([5, 5, 5]), [5.5] * 3)
    with pytest.raises(InputError):
        minmax_scale([])


@given(arrays(np.float64, st.integers(2, 12), elements=finite))
def test_minmax_range_and_order(v):
    out = minmax_scale(v)
    if np.ptp(v) == 0:
        assert np.all(out == 5.5)
        return
    assert out.min() == 1.0 and out.max() == 10.0
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


def test_fuse_examples():
    _, _, f = fuse([1, 10], [1, 10])
    np.testing.assert_allclose(f, [1, 10])
    # a layer maximal in both indicators gets the top fusion value
    _, _, f = fuse([1, 5, 9], [2, 3, 8])
    assert f[2] == 10.0 and f[0] == 1.0


def test_fuse_matches_scalar_oracle(rng):
    ranks, ents = rng.uniform(1, 8, 4), rng.uniform(0.1, 0.4, 4)
    r, e, f = fuse(ranks, ents)
    ro, eo, fo = fusion_by_hand(ranks, ents)
    np.testing.assert_allclose(r, ro, atol=1e-12)
    np.testing.assert_allclose(e, eo, atol=1e-12)
    np.testing.assert_allclose(f, fo, atol=1e-12)


@given(arrays(np.float64, 5, elements=st.floats(0.1, 20)), arrays(np.float64, 5, elements=st.floats(0.01, 2)),
       st.floats(0.01, 100))
def test_fuse_absorbs_positive_scaling(ranks, ents, k):
    a = fuse(ranks, ents)
    b = fuse(k * ranks, k * ents)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-9)


# allocation ---------------------------------------------------------------

def test_equal_fusion_gives_uniform_ratio():
    plan = allocate_prune_counts([3, 3, 3], [10, 10, 10], 0.6)
    assert plan.prune_counts == [4, 4, 4]


def test_low_fusion_layer_prunes_more():
    plan = allocate_prune_counts([1, 10], [16, 16], 0.5, 0.9)
    assert plan.prune_counts[0] > plan.prune_counts[1]
    assert plan.prune_counts == allocation_by_scan([1, 10], [16, 16], 0.5, 0.9)


@pytest.mark.parametrize("fusion,channels,kept", [
    ([1.0, 4.0, 10.0], [8, 12, 16], 0.55),
    ([2.5, 1.0, 7.0, 10.0], [16, 16, 32, 32], 0.4),
])
def test_allocation_matches_scan_oracle(fusion, channels, kept):
    assert allocate_prune_counts(fusion, channels, kept, 0.8).prune_counts == \
        allocation_by_scan(fusion, channels, kept, 0.8)


def test_full_budget_prunes_nothing():
    assert allocate_prune_counts([1, 5, 10], [8, 8, 8], 1.0).prune_counts == [0, 0, 0]


def test_infeasible_budget_reports_tightest():
    with pytest.raises(PlanningError) as info:
        allocate_prune_counts([1, 10], [10, 10], 0.05, r_max=0.5)
    assert info.value.tightest == pytest.approx(0.5)


def test_allocation_input_errors():
    with pytest.raises(InputError):
        allocate_prune_counts([1, 2], [4], 0.5)
    with pytest.raises(InputError):
        allocate_prune_counts([1, 2], [4, 4], 0.0)
    with pytest.raises(InputError):
        allocate_prune_counts([1, 2], [4, 4], 0.5, metric="energy")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1, 10), min_size=2, max_size=8), st.integers(2, 40), st.floats(0.15, 1.0),
       st.floats(0.2, 0.95))
def test_allocation_invariants(fusion, width, kept, r_max):
    channels = [width] * len(fusion)
    try:
        plan = allocate_prune_counts(fusion, channels, kept, r_max)
    except PlanningError:
        assert kept < 1 - r_max + 1e-9
        return
    u = np.array(plan.prune_counts)
    assert np.all(u >= 0) and np.all(u <= np.floor(r_max * width)) and np.all(width - u >= 1)
    order = np.argsort(fusion)
    assert np.all(np.diff(u[order]) <= 0)  # lower fusion, at least as many pruned
    # within one channel per layer of the continuous target
    assert abs(plan.achieved - kept) * sum(channels) <= len(channels) + 1e-9


def test_flops_budget_is_met_within_rounding():
    m = build_plainnet([8, 8, 16, 16], 10, (3, 16, 16))
    layers = m.prunable_layers()
    plan = allocate_prune_counts([10, 6, 3, 1], [8, 8, 16, 16], 0.5, 0.9, "flops", m, layers)
    assert plan.metric == "flops" and abs(plan.achieved - 0.5) < 0.08
    cplan = constant_ratio_plan([8, 8, 16, 16], 0.5, 0.9, "flops", m, layers)
    assert cplan.meta["allocation"] == "constant"


def test_plan_json_roundtrip():
    plan = allocate_prune_counts([1, 10], [8, 8], 0.5)
    back = PrunePlan.from_json(json.loads(json.dumps(plan.to_json(), default=float)))
    assert back.prune_counts == plan.prune_counts and back.keep_counts == plan.keep_counts


# model-level statistics ---------------------------------------------------

@pytest.fixture(scope="module")
def small_model_and_batches():
    ds = synth_blobs(4, 16, 8, seed=0)
    return build_plainnet([4, 6, 6, 8], 4, (3, 8, 8), seed=1), sample_probe_batches(ds, 8, 4, 0)


def test_stability_identical_batches_zero_spread(small_model_and_batches):
    m, batches = small_model_and_batches
    rep = stability_report(m, [batches[0], batches[0]])
    assert np.all(rep.rank_spread == 0) and np.all(rep.entropy_spread == 0)


def test_stability_untrained_model_finite(small_model_and_batches):
    m, batches = small_model_and_batches
    rep = stability_report(m, batches)
    assert rep.ranks.shape == (4, 4)
    assert np.all(np.isfinite(rep.rank_spread)) and np.all(np.isfinite(rep.entropy_spread))
    assert len(list(rep.rows())) == 16
    with pytest.raises(InputError):
        stability_report(m, batches[:1])


def test_analyze_layers_bounds(small_model_and_batches):
    m, batches = small_model_and_batches
    stats = analyze_layers(m, batches)
    for s in stats:
        assert 0 <= s.avg_rank <= 8
        assert 0 <= s.avg_entropy <= np.log(s.channels) / s.channels + 1e-12
        for v in (s.rank_scaled, s.entropy_scaled, s.fusion):
            assert 1 <= v <= 10
    assert max(s.fusion for s in stats) == 10 and min(s.fusion for s in stats) == 1
