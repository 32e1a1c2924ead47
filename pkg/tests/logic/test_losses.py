# tests/logic/test_losses.py
import math

import numpy as np
import pytest

from app.analysis.warp import NormalizationError, discrete_reconstruct, shift_volume
from app.analysis.disparity import expected_disparity, make_levels
from app.core import ShapeMismatchError, Tensor, backward, ops
from app.core.gradcheck import check_gradients
from app.logic.losses import (
    SSIM_C1,
    FeatureExtractor,
    LossWeights,
    composite_target,
    cost_volume_loss,
    distill_loss,
    guidance_loss,
    hybrid_volume,
    mono_reconstruction_loss,
    mono_total,
    resample_volume,
    smoothness_loss,
    ssim,
    stereo_reconstruction_loss,
    stereo_total,
)

RNG = np.random.default_rng(21)
SHAPE = (1, 3, 8, 16)


def _img(shape=SHAPE):
    return Tensor(RNG.uniform(0.05, 0.95, size=shape))


def _prob(n=4, h=8, w=16, b=1):
    logits = RNG.normal(size=(b, n, h, w))
    e = np.exp(logits)
    return Tensor(e / e.sum(axis=1, keepdims=True))


# =============================================================================
# Weights
# =============================================================================
def test_default_weights():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4) == (0.0008, 0.008, 0.01, 0.01)
    assert (w.alpha, w.beta, w.gamma, w.t1, w.t2) == (0.15, 0.01, 2.0, 1.0, 0.13)


def test_bad_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        LossWeights(lambda3=-0.1)


# =============================================================================
# SSIM
# =============================================================================
def test_ssim_identical_is_zero():
    a = _img()
    assert ssim(a, a).item() == pytest.approx(0.0, abs=1e-12)


def test_ssim_constant_images_closed_form():
    a = Tensor(np.zeros((1, 3, 6, 6)))
    b = Tensor(np.ones((1, 3, 6, 6)))
    expected = (1 - SSIM_C1 / (1 + SSIM_C1)) / 2
    assert ssim(a, b).item() == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.49995, abs=1e-6)


def test_ssim_symmetric_and_bounded():
    a, b = _img(), _img()
    v = ssim(a, b).item()
    assert v == pytest.approx(ssim(b, a).item(), abs=1e-12)
    assert 0.0 <= v <= 1.0


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ssim(_img(), _img((1, 3, 8, 8)))


# =============================================================================
# Reconstruction losses
# =============================================================================
def test_mono_reconstruction_identity_and_constant_residual():
    fx = FeatureExtractor(seed=0)
    a = _img()
    assert mono_reconstruction_loss(a, a, fx, beta=0.01).item() == pytest.approx(0.0, abs=1e-12)
    assert mono_reconstruction_loss(a + 0.2, a, fx, beta=0.0).item() == pytest.approx(0.2)


def test_feature_extractor_is_frozen_and_seeded():
    fx1, fx2 = FeatureExtractor(seed=4), FeatureExtractor(seed=4)
    img = _img()
    feats = fx1(img)
    assert [f.shape for f in feats] == [(1, 8, 4, 8), (1, 16, 2, 4), (1, 32, 1, 2)]
    for f1, f2 in zip(feats, fx2(img)):
        assert np.array_equal(f1.data, f2.data)
    # input ไม่ต้องการ grad -> feature ไม่ถูก track
    assert not any(f.requires_grad for f in feats)


def test_mono_reconstruction_gradient():
    fx = FeatureExtractor(seed=1)
    target = _img()
    check_gradients(lambda r: mono_reconstruction_loss(r, target, fx, beta=0.01), [_img()])


def test_stereo_reconstruction_cases():
    a = _img()
    assert stereo_reconstruction_loss(a, a, 0.15).item() == pytest.approx(0.0, abs=1e-12)
    b = a + 0.1
    assert stereo_reconstruction_loss(b, a, 1.0).item() == pytest.approx(0.1)
    expected = 0.15 * 0.1 + 0.85 * ssim(b, a).item()
    assert stereo_reconstruction_loss(b, a, 0.15).item() == pytest.approx(expected, rel=1e-12)


def test_stereo_reconstruction_gradient():
    target = _img()
    check_gradients(lambda r: stereo_reconstruction_loss(r, target, 0.15), [_img()])


# =============================================================================
# Smoothness
# =============================================================================
def test_smoothness_constant_disparity_zero():
    assert smoothness_loss(Tensor(np.full((1, 1, 8, 16), 3.0)), _img(), 2.0).item() == 0.0


def test_smoothness_unit_ramp_flat_image():
    d = Tensor(np.broadcast_to(np.arange(16.0), (1, 1, 8, 16)).copy())
    assert smoothness_loss(d, Tensor(np.full(SHAPE, 0.5)), 2.0).item() == pytest.approx(1.0)


def test_smoothness_decreases_with_sharper_edges():
    d = Tensor(RNG.uniform(0, 4, size=(1, 1, 8, 16)))
    soft = Tensor(np.broadcast_to(np.arange(16.0) * 0.01, SHAPE).copy())
    sharp = Tensor(np.broadcast_to(np.arange(16.0) * 0.05, SHAPE).copy())
    assert smoothness_loss(d, sharp, 2.0).item() < smoothness_loss(d, soft, 2.0).item()


def test_smoothness_gradient():
    img = _img()
    check_gradients(lambda d: smoothness_loss(d, img, 2.0), [Tensor(RNG.uniform(1, 5, size=(1, 1, 8, 16)))])
    d = Tensor(RNG.uniform(1, 5, size=(1, 1, 8, 16)))
    check_gradients(lambda i: smoothness_loss(d, i, 2.0), [_img()])


# =============================================================================
# Composite target
# =============================================================================
def test_composite_target_selection():
    left, aux = _img(), _img()
    assert np.array_equal(composite_target(left, aux, np.ones((1, 1, 8, 16))).data, left.data)
    assert np.array_equal(composite_target(left, aux, np.zeros((1, 1, 8, 16))).data, aux.data)

    checker = (np.indices((8, 16)).sum(axis=0) % 2).astype(np.float64)[None, None]
    out = composite_target(left, aux, checker).data
    ref = np.where(checker == 1, left.data, aux.data)
    assert np.allclose(out, ref)


# =============================================================================
# Cost-volume loss
# =============================================================================
def _gap_threshold(l1):
    """t1 กลางช่องว่างที่กว้างที่สุดของค่า L1 -> finite difference ไม่สลับการเลือก"""
    v = np.sort(l1.ravel())
    i = int(np.argmax(np.diff(v)))
    return 0.5 * (v[i] + v[i + 1])


def test_cost_volume_hand_example():
    a = Tensor(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))
    p = np.array([0.0, 1.0]).reshape(1, 2, 1, 1)
    assert cost_volume_loss([a], p, 1.0).item() == pytest.approx(2.0)


def test_cost_volume_exact_match_is_zero():
    p = _prob(h=8, w=16)
    a = Tensor(p.data.copy())
    assert cost_volume_loss([a], p, 1.0).item() == 0.0


def test_cost_volume_hinge():
    p = _prob(h=4, w=8)
    a = Tensor(np.clip(p.data + RNG.uniform(-0.05, 0.05, size=p.shape), 0, None))
    # ผลต่างรวม ≤ 4·0.05 < t1 -> ไม่มีจุดถูกเลือก
    assert cost_volume_loss([a], p, 1.0).item() == 0.0


def test_cost_volume_gradient_flows_to_volumes_only():
    p = _prob(n=4, h=8, w=16)
    p.requires_grad = True
    vols = [Tensor(RNG.uniform(0, 1, size=(1, 4, h, w))) for h, w in ((1, 2), (2, 4), (4, 8))]
    diffs = np.concatenate(
        [np.abs(v.data - resample_volume(p.data, v.shape[2], v.shape[3])).sum(axis=1).ravel() for v in vols]
    )
    t1 = _gap_threshold(diffs)
    check_gradients(lambda a, b, c: cost_volume_loss([a, b, c], p, t1), vols)

    loss = cost_volume_loss(vols, p, t1)
    backward(loss)
    assert p.grad is None


# =============================================================================
# Guidance loss
# =============================================================================
def test_guidance_cases():
    d_a = Tensor(RNG.uniform(1, 5, size=(1, 1, 8, 16)))
    zeros, ones = np.zeros((1, 1, 8, 16)), np.ones((1, 1, 8, 16))
    assert guidance_loss(d_a, Tensor(d_a.data.copy()), ones).item() == 0.0
    assert guidance_loss(d_a, d_a + 7.0, zeros).item() == pytest.approx(0.0, abs=1e-12)
    assert guidance_loss(d_a, d_a + 2.0, ones).item() == pytest.approx(2.0)


def test_guidance_gradient_only_to_stereo():
    d_a = Tensor(RNG.uniform(1, 5, size=(1, 1, 8, 16)), requires_grad=True)
    m_out = (RNG.uniform(size=(1, 1, 8, 16)) > 0.7).astype(np.float64)
    check_gradients(lambda d_s: guidance_loss(d_a, d_s, m_out), [Tensor(RNG.uniform(1, 5, size=(1, 1, 8, 16)))])
    assert d_a.grad is None


# =============================================================================
# Totals
# =============================================================================
def test_stereo_total_weights():
    assert stereo_total(0.0, 0.0, 0.0, 0.0).item() == 0.0
    assert stereo_total(1.0, 1.0, 1.0, 1.0).item() == pytest.approx(1.028)
    base = stereo_total(1.0, 1.0, 1.0, 1.0).item()
    for i in range(4):
        parts = [1.0] * 4
        parts[i] = 2.0
        assert stereo_total(*parts).item() > base


def test_mono_total_weights():
    assert mono_total(0.0, 0.0).item() == 0.0
    assert mono_total(1.0, 1.0).item() == pytest.approx(1.0008)


def test_totals_mix_tensor_and_float_terms():
    rec = Tensor(np.array(0.5))
    total = stereo_total(rec, 1.0, 0, np.float32(2.0))
    assert total.item() == pytest.approx(0.5 + 0.008 + 2 * 0.01)
    assert mono_total(rec, 3).item() == pytest.approx(0.5 + 3 * 0.0008)


def test_mono_total_gradient_through_reconstruction():
    # logits -> shift -> softmax -> reconstruct -> L_M
    levels = make_levels(1, 6, 4)
    fx = FeatureExtractor(seed=2)
    right, left = _img(), _img()
    w = LossWeights()

    def loss(v_right):
        p = ops.softmax_channel(shift_volume(v_right, levels))
        rec = discrete_reconstruct(p, right, levels).img
        d = expected_disparity(p, levels)
        return mono_total(mono_reconstruction_loss(rec, left, fx, w.beta), smoothness_loss(d, left, w.gamma), w)

    check_gradients(loss, [Tensor(RNG.normal(size=(1, 4, 8, 16)))])


# =============================================================================
# Distillation
# =============================================================================
def test_hybrid_volume_cases():
    p_s, p_a = _prob(), _prob()
    zeros = np.zeros((1, 1, 8, 16))
    assert np.allclose(hybrid_volume(p_s, p_a, zeros).data, p_s.data)
    assert np.allclose(hybrid_volume(p_s, p_a, zeros + 1.0).data, p_a.data)
    half = hybrid_volume(p_s, p_a, zeros + 0.5).data
    assert np.allclose(half, 0.5 * (p_s.data + p_a.data))
    mixed = hybrid_volume(p_s, p_a, RNG.uniform(size=(1, 1, 8, 16))).data
    assert np.allclose(mixed.sum(axis=1), 1.0, atol=1e-6)


def test_distill_cases():
    p = _prob()
    assert distill_loss(p, Tensor(p.data.copy())).item() == pytest.approx(0.0, abs=1e-12)
    p_h = Tensor(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))
    p_m = Tensor(np.array([0.5, 0.5]).reshape(1, 2, 1, 1))
    assert distill_loss(p_h, p_m).item() == pytest.approx(math.log(2.0))
    for _ in range(20):
        assert distill_loss(_prob(), _prob()).item() >= 0.0


def test_distill_errors():
    with pytest.raises(ShapeMismatchError):
        distill_loss(_prob(n=4), _prob(n=5))
    with pytest.raises(NormalizationError):
        distill_loss(Tensor(np.full((1, 2, 1, 1), 0.9)), _prob(n=2, h=1, w=1))


def test_distill_gradient_to_student_only():
    teacher = _prob()
    teacher.requires_grad = True
    check_gradients(lambda v: distill_loss(teacher, ops.softmax_channel(v)), [Tensor(RNG.normal(size=(1, 4, 8, 16)))])
    assert teacher.grad is None
