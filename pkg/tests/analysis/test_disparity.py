# tests/analysis/test_disparity.py
import math

import numpy as np
import pytest

from app.analysis.disparity import (
    CameraRig,
    DisparityLevels,
    DisparityRangeError,
    LevelsError,
    depth_to_disparity,
    disparity_to_depth,
    expected_disparity,
    make_levels,
)
from app.core import Tensor


def _volume(probs, h=2, w=3):
    p = np.asarray(probs, dtype=np.float64).reshape(1, -1, 1, 1)
    return Tensor(np.broadcast_to(p, (1, p.shape[1], h, w)).copy())


# =============================================================================
# make_levels
# =============================================================================
def test_default_levels_endpoints():
    lv = make_levels(2, 300, 49)
    assert lv.n == 49
    assert lv.values[0] == 2.0 and lv.values[48] == 300.0
    # ตัวกลาง = geometric mean
    assert lv.values[24] == pytest.approx(math.sqrt(600.0), abs=1e-4)


def test_two_levels_are_endpoints():
    assert np.array_equal(make_levels(2, 300, 2).values, [2.0, 300.0])


def test_levels_have_constant_ratio():
    b = make_levels(1, 24, 11).values
    ratios = b[1:] / b[:-1]
    assert np.allclose(ratios, ratios[0], rtol=0, atol=1e-12)
    assert np.all(np.diff(b) > 0)


@pytest.mark.parametrize("args", [(0, 10, 5), (5, 5, 5), (10, 2, 5), (1, 10, 1), (1, 10, 2.5)])
def test_bad_levels_rejected(args):
    with pytest.raises(LevelsError):
        make_levels(*args)


def test_levels_type_validates():
    with pytest.raises(LevelsError):
        DisparityLevels(np.array([3.0, 2.0]))
    lv = DisparityLevels([1.0, 4.0])
    assert lv.scaled(0.25).tolist() == [0.25, 1.0]
    with pytest.raises(ValueError):
        lv.values[0] = 9.0


# =============================================================================
# expected_disparity
# =============================================================================
def test_one_hot_gives_level():
    lv = make_levels(2, 300, 5)
    for n in range(lv.n):
        onehot = np.zeros(lv.n)
        onehot[n] = 1.0
        d = expected_disparity(_volume(onehot), lv)
        assert d.shape == (1, 1, 2, 3)
        assert np.allclose(d.data, lv.values[n])


def test_uniform_two_levels_is_mean():
    d = expected_disparity(_volume([0.5, 0.5]), make_levels(2, 300, 2))
    assert np.allclose(d.data, 151.0)


def test_hand_evaluated_expectation():
    lv = DisparityLevels([2.0, math.sqrt(600.0), 300.0])
    d = expected_disparity(_volume([0.2, 0.3, 0.5]), lv)
    assert np.allclose(d.data, 157.7485, atol=1e-4)


def test_expectation_bounded_and_monotone():
    rng = np.random.default_rng(3)
    lv = make_levels(1, 24, 9)
    logits = rng.normal(size=(2, 9, 4, 5))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    d = expected_disparity(Tensor(p), lv).data
    assert d.min() >= lv.b_min - 1e-9 and d.max() <= lv.b_max + 1e-9

    # ย้าย mass จาก channel ต่ำไปสูง -> d ต้องไม่ลด
    moved = p.copy()
    amount = 0.5 * moved[:, 2]
    moved[:, 2] -= amount
    moved[:, 6] += amount
    d2 = expected_disparity(Tensor(moved), lv).data
    assert np.all(d2 >= d - 1e-12)


def test_channel_mismatch():
    with pytest.raises(LevelsError):
        expected_disparity(_volume([0.5, 0.5]), make_levels(1, 8, 3))


# =============================================================================
# Depth <-> disparity
# =============================================================================
def test_depth_examples():
    assert disparity_to_depth(np.array([1.0]), CameraRig(1.0, 100.0))[0] == pytest.approx(100.0)
    assert disparity_to_depth(np.array([36.0]), CameraRig(7.2, 100.0))[0] == pytest.approx(20.0)


def test_depth_round_trip():
    rig = CameraRig()
    d = np.random.default_rng(0).uniform(0.5, 300.0, size=(1, 1, 4, 6))
    back = depth_to_disparity(disparity_to_depth(d, rig), rig)
    assert np.allclose(back, d, rtol=1e-9, atol=0)
    t = disparity_to_depth(Tensor(d), rig)
    assert isinstance(t, Tensor)
    assert np.allclose(t.data, rig.bf / d)


def test_non_positive_disparity_rejected():
    with pytest.raises(DisparityRangeError):
        disparity_to_depth(np.array([1.0, 0.0]), CameraRig())
    with pytest.raises(DisparityRangeError):
        CameraRig(baseline=0.0)
