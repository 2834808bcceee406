import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infoprune.checkpoint import VERSION, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from infoprune.costs import count_costs
from infoprune.errors import ConfigError, CouplingError, DegenerateLayerError, DimensionError, FormatError
from infoprune.graph import ChannelMask, masked_forward, predict, run
from infoprune.layers import Conv2d, Dense, GlobalAvgPool
from infoprune.graph import ModelGraph
from infoprune.surgery import rewrite_model
from infoprune.zoo import build_plainnet, build_resnet_mini


def random_masks(model, rng, layers=None):
    masks = []
    for i in layers or model.prunable_layers():
        c = model.layers[i].out_channels
        bits = rng.random(c) < 0.6
        bits[rng.integers(c)] = True
        masks.append(ChannelMask(i, bits))
    return masks


# builders -----------------------------------------------------------------

def test_plainnet_hand_count():
    m = build_plainnet([8, 16], 10, (3, 32, 32))
    assert len(m.conv_indices()) == 2
    dense = 16 * 16 * 16 * 10 + 10
    assert count_costs(m).total_params == 8 * 3 * 9 + 8 + 16 * 8 * 9 + 16 + dense


def test_plainnet_single_block():
    m = build_plainnet([4], 3, (3, 8, 8))
    assert m.conv_indices() == [0]
    assert predict(m, np.zeros((2, 3, 8, 8))).shape == (2, 3)


def test_plainnet_deterministic():
    a, b = build_plainnet([8, 8], seed=5), build_plainnet([8, 8], seed=5)
    for (k, x), (_, y) in zip(a.parameters().items(), b.parameters().items()):
        np.testing.assert_array_equal(x, y)
    c = build_plainnet([8, 8], seed=6)
    assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)


def test_plainnet_config_errors():
    with pytest.raises(ConfigError):
        build_plainnet([8, 8, 8, 8, 8, 8], 10, (3, 4, 4))
    with pytest.raises(ConfigError):
        build_plainnet([3, 8])
    with pytest.raises(ConfigError):
        build_plainnet([])


def test_resnet_conv_count():
    m = build_resnet_mini([8, 16], 2, 10)
    assert len(m.conv_indices()) == 9
    # only the first conv of each block is prunable
    assert len(m.prunable_layers()) == 4


def test_resnet_zero_residual_gives_skip(rng):
    m = build_resnet_mini([4], 1, 3, (3, 8, 8))
    conv2 = m.conv_indices()[2]
    m.layers[conv2].weight[:] = 0.0
    m.layers[conv2].bias[:] = 0.0
    x = rng.standard_normal((2, 3, 8, 8))
    out = run(m, x).outputs
    block_out = len(m.layers) - 3  # relu after the add
    np.testing.assert_array_equal(out[block_out], out[1])


def test_resnet_stride_two_stage(rng):
    m = build_resnet_mini([4, 8], 1, 3, (3, 8, 8))
    logits = predict(m, rng.standard_normal((2, 3, 8, 8)))
    assert logits.shape == (2, 3)


# masked forward -----------------------------------------------------------

def test_all_true_masks_bit_identical(rng):
    m = build_plainnet([6, 6], 4, (3, 8, 8), seed=1)
    x = rng.standard_normal((3, 3, 8, 8))
    masks = [ChannelMask.keep_all(i, m.layers[i].out_channels) for i in m.conv_indices()]
    a, _ = masked_forward(m, x, masks)
    assert np.array_equal(a, predict(m, x))


def test_all_false_mask_zeroes_layer(rng):
    m = build_plainnet([6, 6], 4, (3, 8, 8), seed=1)
    m.layers[2].bias[:] = 0.0
    x = rng.standard_normal((3, 3, 8, 8))
    _, acts = masked_forward(m, x, [ChannelMask(0, np.zeros(6, bool))])
    assert not acts[0].any()
    assert not acts[2].any()


def test_mask_length_error():
    m = build_plainnet([6, 6], 4, (3, 8, 8))
    with pytest.raises(DimensionError):
        masked_forward(m, np.zeros((1, 3, 8, 8)), [ChannelMask(0, np.ones(5, bool))])


# rewrite ------------------------------------------------------------------

def test_rewrite_all_true_identical():
    m = build_plainnet([6, 6], 4, (3, 8, 8))
    r = rewrite_model(m, [ChannelMask.keep_all(0, 6)])
    for (k, a), (_, b) in zip(m.parameters().items(), r.parameters().items()):
        np.testing.assert_array_equal(a, b)


def test_rewrite_two_channel_midlayer(rng):
    m = build_plainnet([4, 4, 4], 3, (3, 8, 8), pool_every=0, seed=3)
    m = rewrite_model(m, [ChannelMask.from_pruned(2, 4, [0, 3])])
    mask = ChannelMask(2, [True, False])
    r = rewrite_model(m, [mask])
    assert r.layers[4].weight.shape == (4, 1, 3, 3)
    x = rng.standard_normal((5, 3, 8, 8))
    np.testing.assert_allclose(predict(r, x), masked_forward(m, x, [mask])[0], atol=1e-6)


def test_rewrite_rejects_empty_layer():
    m = build_plainnet([6, 6], 4, (3, 8, 8))
    with pytest.raises(DegenerateLayerError):
        rewrite_model(m, [ChannelMask(0, np.zeros(6, bool))])


def test_rewrite_rejects_coupled_channels():
    m = build_resnet_mini([4, 8], 1, 3, (3, 8, 8))
    stem = m.conv_indices()[0]
    with pytest.raises(CouplingError) as info:
        rewrite_model(m, [ChannelMask.from_pruned(stem, 4, [1])])
    assert stem in info.value.group and len(info.value.group) > 1


@pytest.mark.parametrize("builder", [
    lambda: build_plainnet([6, 8, 8], 5, (3, 8, 8), seed=2),
    lambda: build_resnet_mini([4, 8], 2, 5, (3, 8, 8), seed=2),
])
def test_rewrite_matches_masked_forward(builder, rng):
    m = builder()
    x = rng.standard_normal((10, 3, 8, 8))
    for _ in range(5):
        masks = random_masks(m, rng)
        np.testing.assert_allclose(predict(rewrite_model(m, masks), x), masked_forward(m, x, masks)[0], atol=1e-6)


def test_rewrite_dense_after_gap(rng):
    layers = [Conv2d([-1], rng.standard_normal((4, 2, 3, 3)), rng.standard_normal(4), 1, 1)]
    layers += [GlobalAvgPool([0]), Dense([1], rng.standard_normal((3, 4)), np.zeros(3))]
    m = ModelGraph(layers, (2, 5, 5), 3)
    mask = ChannelMask(0, [True, False, True, False])
    x = rng.standard_normal((4, 2, 5, 5))
    np.testing.assert_allclose(predict(rewrite_model(m, [mask]), x), masked_forward(m, x, [mask])[0], atol=1e-12)


# costs --------------------------------------------------------------------

def test_conv_cost_hand_example():
    w = np.zeros((32, 16, 3, 3))
    m = ModelGraph([Conv2d([-1], w, np.zeros(32), 1, 1)], (16, 8, 8), 0)
    cp = count_costs(m)
    assert cp.params == (4640,)
    assert cp.flops == (9 * 16 * 32 * 64,) == (294_912,)


def test_unit_conv_cost():
    m = ModelGraph([Conv2d([-1], np.ones((1, 1, 1, 1)), np.zeros(1), 1, 0)], (1, 1, 1), 0)
    cp = count_costs(m)
    assert cp.flops == (1,) and cp.params == (2,)


def test_cost_drop_after_channel_removal():
    m = build_plainnet([6, 8], 4, (3, 8, 8), pool_every=0)
    before = count_costs(m)
    after = count_costs(rewrite_model(m, [ChannelMask.from_pruned(0, 6, [2])]))
    assert before.params[0] - after.params[0] == 9 * 3 + 1
    # consumer MACs scale with its input channels
    assert after.flops[2] * 6 == before.flops[2] * 5
    assert after.total_flops < before.total_flops and after.total_params < before.total_params


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_cost_strictly_monotone_and_additive(seed):
    rng = np.random.default_rng(seed)
    m = build_plainnet([5, 6, 7], 3, (3, 8, 8), seed=seed % 100)
    cp = count_costs(m)
    assert cp.total_flops == sum(cp.flops) and cp.total_params == sum(cp.params)
    r = rewrite_model(m, random_masks(m, rng))
    removed = sum(m.layers[i].out_channels - r.layers[i].out_channels for i in m.conv_indices())
    if removed:
        assert count_costs(r).total_flops < cp.total_flops
        assert count_costs(r).total_params < cp.total_params


# checkpoints --------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    m = build_resnet_mini([4, 8], 1, 3, (3, 8, 8), seed=9)
    p = save_checkpoint(m, tmp_path / "a.ckpt")
    loaded = load_checkpoint(p)
    save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert p.read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    x = rng.standard_normal((3, 3, 8, 8))
    assert np.array_equal(predict(m, x), predict(loaded, x))
    assert count_costs(m) == count_costs(loaded)


def test_checkpoint_truncated(tmp_path):
    raw = to_bytes(build_plainnet([4, 4], 3, (3, 8, 8)))
    for cut in (5, 30, len(raw) - 8):
        with pytest.raises(FormatError):
            from_bytes(raw[:cut])


def test_checkpoint_version_mismatch():
    raw = bytearray(to_bytes(build_plainnet([4], 3, (3, 8, 8))))
    raw[8:12] = (VERSION + 1).to_bytes(4, "little")
    with pytest.raises(FormatError, match="version"):
        from_bytes(bytes(raw))


def test_checkpoint_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        from_bytes(b"x" * 64)
