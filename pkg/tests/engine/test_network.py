# tests/engine/test_network.py
import numpy as np
import pytest

from app.analysis.disparity import DisparityLevels, make_levels
from app.analysis.warp import LEFT
from app.core import ShapeMismatchError, Tensor, backward, no_grad, ops
from app.engine.layers import Conv2d, SEConv
from app.engine.network import AUXILIARY, FINAL, GROUPS, MatchingModule, NetworkConfig, TwoInOneNet
from app.logic.losses import hybrid_volume

TINY = NetworkConfig(
    encoder_widths=(4, 4, 4, 4),
    decoder_widths=(4, 4, 4),
    decoder_block_width=4,
    seed=3,
)


def _net(n=5, cfg=TINY):
    return TwoInOneNet(make_levels(1, 8, n), cfg)


def _img(h=16, w=32, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(1, 3, h, w)))


def _grads_absent(params):
    return all(p.grad is None or not p.grad.any() for p in params.values())


# =============================================================================
# Encoder
# =============================================================================
def test_encoder_pyramid_shapes_default_widths():
    net = TwoInOneNet(make_levels(1, 24, 17))
    feats = net.encode(Tensor(np.zeros((1, 3, 64, 128))))
    assert [f.shape[1:] for f in feats] == [(16, 32, 64), (32, 16, 32), (64, 8, 16), (128, 4, 8)]


def test_encoder_weight_sharing_and_scaling():
    net = _net()
    img = _img()
    a, b = net.encode(img), net.encode(Tensor(img.data.copy()))
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.data, fb.data)
    big = net.encode(_img(32, 64))
    for fs, fb in zip(a, big):
        assert fb.shape[2:] == (2 * fs.shape[2], 2 * fs.shape[3])


def test_encoder_rejects_indivisible_size():
    with pytest.raises(ShapeMismatchError):
        _net().encode(Tensor(np.zeros((1, 3, 20, 32))))


# =============================================================================
# Aggregation blocks
# =============================================================================
def test_branch_switch_changes_values_not_shape():
    net = _net()
    c = net.encode(_img())
    aux = net.aggregate(3, c[3], c[2], AUXILIARY)
    fin = net.aggregate(3, c[3], c[2], FINAL)
    assert aux.shape == fin.shape == (1, 4) + c[2].shape[2:]
    assert not np.allclose(aux.data, fin.data)


def test_equal_branch_weights_give_equal_outputs():
    net = _net()
    block = net.agg[2]
    for name, p in block.branches[FINAL].named_parameters():
        p.data = dict(block.branches[AUXILIARY].named_parameters())[name].data.copy()
    c = net.encode(_img())
    f3 = net.aggregate(3, c[3], c[2])
    assert np.array_equal(net.aggregate(2, f3, c[1], AUXILIARY).data, net.aggregate(2, f3, c[1], FINAL).data)


def test_aggregate_resolution_mismatch():
    net = _net()
    c = net.encode(_img())
    with pytest.raises(ShapeMismatchError):
        net.aggregate(3, c[3], c[1])
    with pytest.raises(ValueError):
        net.aggregate(3, c[3], c[2], "sideways")


# =============================================================================
# Matching module
# =============================================================================
def _unit_columns(c, h, w, seed=1):
    v = np.random.default_rng(seed).normal(size=(1, c, h, w))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_constant_query_key_gives_uniform_volume():
    rng = np.random.default_rng(0)
    mm = MatchingModule(rng, 6, 5)
    for conv in (mm.query, mm.key):
        conv.weight.data = np.zeros_like(conv.weight.data)
        conv.bias.data = np.full_like(conv.bias.data, 0.3)
    f = Tensor(rng.normal(size=(1, 6, 4, 8)))
    attn, fused = mm(f, Tensor(rng.normal(size=(1, 6, 4, 8))), make_levels(1, 8, 5), 8)
    assert np.allclose(attn.data, 1.0 / 5)
    assert fused.shape == f.shape


def test_constructed_shift_argmax():
    C, h, w = 8, 3, 32
    levels = DisparityLevels(np.arange(1.0, 10.0))
    assert levels.n == 9
    mm = MatchingModule(np.random.default_rng(0), C, levels.n)
    for conv in (mm.query, mm.key):
        conv.weight.data = np.eye(C).reshape(C, C, 1, 1)
        conv.bias.data = np.zeros_like(conv.bias.data)
    f_l = Tensor(_unit_columns(C, h, w))
    for k, b in enumerate(levels.values):
        # right(x) = left(x + b_k) -> left(x) = right(x - b_k)
        f_r = Tensor(ops.shift_stack(f_l, [b]).data[:, 0])
        attn, _ = mm(f_l, f_r, levels, w, LEFT)
        interior = attn.data[0, :, :, 10:w - 10]
        assert (interior.argmax(axis=0) == k).mean() >= 0.99, f"level {k}"


def test_matching_volume_normalized_and_scaled_levels():
    rng = np.random.default_rng(2)
    mm = MatchingModule(rng, 4, 7, variant="mfm")
    f_l, f_r = Tensor(rng.normal(size=(2, 4, 4, 8))), Tensor(rng.normal(size=(2, 4, 4, 8)))
    attn, fused = mm(f_l, f_r, make_levels(1, 24, 7), 32)
    assert attn.shape == (2, 7, 4, 8)
    assert np.allclose(attn.data.sum(axis=1), 1.0, atol=1e-6)
    assert fused.shape == f_l.shape
    with pytest.raises(ShapeMismatchError):
        mm(f_l, Tensor(rng.normal(size=(2, 4, 4, 4))), make_levels(1, 24, 7), 32)


@pytest.mark.parametrize("variant", ["attn", "cat"])
def test_matching_variants(variant):
    rng = np.random.default_rng(4)
    mm = MatchingModule(rng, 4, 5, variant=variant)
    f = Tensor(rng.normal(size=(1, 4, 4, 8)))
    attn, fused = mm(f, f, make_levels(1, 8, 5), 8)
    assert fused.shape == f.shape
    assert (attn is None) == (variant == "cat")


def test_se_conv_gate_shape():
    se = SEConv(np.random.default_rng(0), 6, 8, reduction=4)
    out = se(Tensor(np.random.default_rng(1).normal(size=(2, 6, 4, 4))))
    assert out.shape == (2, 8, 4, 4)
    with pytest.raises(ValueError):
        Conv2d(np.random.default_rng(0), 2, 2, kernel=5)


# =============================================================================
# Full network
# =============================================================================
def test_forward_mono_shapes():
    net = TwoInOneNet(make_levels(1, 24, 17), TINY)
    img = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 64, 128)))
    v_a = net.forward_mono(img, AUXILIARY)
    v_m = net.forward_mono(img, FINAL)
    assert v_a.shape == v_m.shape == (1, 17, 64, 128)


def test_forward_stereo_shapes_and_costs():
    net = _net()
    out = net.forward_stereo(_img(seed=1), _img(seed=2))
    assert out.v_left.shape == out.v_right.shape == (1, 5, 16, 32)
    assert [a.shape[2:] for a in out.costs_left] == [(2, 4), (4, 8), (8, 16)]
    for a in out.costs_left + out.costs_right:
        assert np.allclose(a.data.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ShapeMismatchError):
        net.forward_stereo(_img(), _img(32, 32))


def test_mono_path_isolation():
    net = _net()
    backward(ops.mean(ops.softmax_channel(net.forward_mono(_img(), AUXILIARY)) * Tensor(np.arange(5.0).reshape(1, 5, 1, 1))))
    assert _grads_absent(net.named_parameters(["mfm", "out_stereo"]))
    assert not _grads_absent(net.named_parameters(["encoder", "out_mono"]))


def test_stereo_path_does_not_touch_mono_head():
    net = _net()
    out = net.forward_stereo(_img(seed=1), _img(seed=2))
    backward(ops.mean(ops.absolute(out.v_left)) + ops.mean(ops.absolute(out.v_right)))
    assert _grads_absent(net.named_parameters(["out_mono"]))
    assert not _grads_absent(net.named_parameters(["mfm", "out_stereo"]))


def test_mirror_equivariance_with_symmetric_weights():
    net = _net()
    for p in net.named_parameters().values():
        if p.ndim == 4:
            p.data = 0.5 * (p.data + p.data[..., ::-1])
    left, right = _img(seed=5), _img(seed=6)
    out = net.forward_stereo(left, right)
    mirrored = net.forward_stereo(ops.flip_w(right), ops.flip_w(left))
    assert np.allclose(mirrored.v_left.data, out.v_right.data[..., ::-1], atol=1e-10)
    assert np.allclose(mirrored.v_right.data, out.v_left.data[..., ::-1], atol=1e-10)


def test_parameter_groups_partition():
    net = _net()
    everything = net.named_parameters()
    per_group = [net.named_parameters([g]) for g in GROUPS]
    assert sum(len(g) for g in per_group) == len(everything)
    for g, params in zip(GROUPS, per_group):
        assert all(name.startswith(g + "/") and name.count("/") == 2 for name in params)
    assert net.num_parameters() == sum(p.size for p in everything.values())
    with pytest.raises(KeyError):
        net.named_parameters(["head"])


def test_set_trainable_flags():
    net = _net()
    net.set_trainable(["mfm", "out_stereo"])
    for name, p in net.named_parameters().items():
        assert p.requires_grad == name.split("/")[0] in ("mfm", "out_stereo")


def test_state_dict_round_trip():
    a, b = _net(), _net(cfg=NetworkConfig(**{**TINY.__dict__, "seed": 99}))
    b.load_state_dict({k: v.copy() for k, v in a.state_dict().items()})
    img = _img()
    assert np.array_equal(a.forward_mono(img).data, b.forward_mono(img).data)
    with pytest.raises(KeyError):
        b.load_state_dict({})


def test_mfm_stage_subset_and_mono_branch():
    cfg = NetworkConfig(**{**TINY.__dict__, "mfm_stages": (1,), "use_final_branch": False})
    net = _net(cfg=cfg)
    assert sorted(net.matchers) == [1]
    assert net.mono_branch == AUXILIARY
    assert len(net.forward_stereo(_img(), _img(seed=1)).costs_left) == 1
    with pytest.raises(ValueError):
        NetworkConfig(matching_module="transformer")


# =============================================================================
# Volume normalization over random inputs
# =============================================================================
@pytest.fixture(scope="module")
def shared_net():
    return _net()


def _max_sum_error(volume):
    return float(np.abs(volume.data.sum(axis=1) - 1.0).max())


@pytest.mark.parametrize("seed", range(100))
def test_volumes_sum_to_one_on_random_inputs(shared_net, seed):
    rng = np.random.default_rng(1000 + seed)
    left = Tensor(rng.uniform(size=(1, 3, 16, 32)))
    right = Tensor(rng.uniform(size=(1, 3, 16, 32)))
    with no_grad():
        p_a = ops.softmax_channel(shared_net.forward_mono(left, AUXILIARY))
        p_m = ops.softmax_channel(shared_net.forward_mono(left, FINAL))
        out = shared_net.forward_stereo(left, right)
        p_s = ops.softmax_channel(out.v_left)
        p_h = hybrid_volume(p_s, p_a, (rng.uniform(size=(1, 1, 16, 32)) > 0.5).astype(np.float64))

    volumes = {"P_a": p_a, "P_m": p_m, "P_s": p_s, "P_s right": ops.softmax_channel(out.v_right), "P_h": p_h}
    volumes.update({f"A left {i}": a for i, a in enumerate(out.costs_left)})
    volumes.update({f"A right {i}": a for i, a in enumerate(out.costs_right)})
    assert len(out.costs_left) == 3
    for name, vol in volumes.items():
        assert _max_sum_error(vol) <= 1e-4, name
