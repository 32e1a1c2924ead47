# tests/services/test_augment.py
import numpy as np
import pytest

from app.adapters.synthetic_stereo import dataset, generate
from app.schemas.sample import SceneSpec
from app.services.augment import AugmentParams, CropError, apply_augment, augment, flip_pair, sample_params


def _sample():
    return next(dataset(1, seed=4, height=32, width=64, d_min=1, d_max=12))


def test_identity_parameters():
    s = _sample()
    out = apply_augment(s, AugmentParams())
    for name in ("left", "right", "disparity", "disparity_right", "validity"):
        assert np.array_equal(getattr(out, name), getattr(s, name))


def test_flip_is_involution():
    s = _sample()
    twice = flip_pair(flip_pair(s))
    assert np.array_equal(twice.left, s.left)
    assert np.array_equal(twice.right, s.right)
    assert np.array_equal(twice.disparity, s.disparity)


def test_flip_swaps_views_and_mirrors():
    s = _sample()
    f = flip_pair(s)
    assert np.array_equal(f.left, s.right[..., ::-1])
    assert np.array_equal(f.disparity, s.disparity_right[..., ::-1])
    assert set(np.unique(f.validity)) <= {0.0, 1.0}


def test_scale_multiplies_disparity():
    spec = SceneSpec(height=32, width=64, ground_top=4, ground_bottom=4, d_min=1, d_max=8, texture_seed=2)
    s = generate(spec)
    out = apply_augment(s, AugmentParams(scale=1.5), crop_hw=(32, 64))
    assert out.left.shape == (3, 32, 64)
    assert np.allclose(out.disparity, 6.0)


def test_crop_too_large():
    s = _sample()
    with pytest.raises(CropError):
        apply_augment(s, AugmentParams(scale=1.0), crop_hw=(48, 64))
    with pytest.raises(CropError):
        apply_augment(s, AugmentParams(scale=1.0, crop_y=4), crop_hw=(32, 64))
    with pytest.raises(CropError):
        sample_params(s, np.random.default_rng(0), (64, 128), scale_range=(0.67, 1.5))


def test_random_augment_is_seeded_and_keeps_size():
    s = _sample()
    a = augment(s, np.random.default_rng(7), (32, 64))
    b = augment(s, np.random.default_rng(7), (32, 64))
    assert a.left.shape == (3, 32, 64) and a.disparity.shape == (1, 32, 64)
    assert np.array_equal(a.left, b.left)
    assert a.left.min() >= 0.0 and a.left.max() <= 1.0


def test_jitter_identical_on_both_views():
    spec = SceneSpec(height=32, width=64, ground_top=0, ground_bottom=0, d_min=0, d_max=8)
    s = generate(spec)
    p = AugmentParams(brightness=(0.05, -0.02, 0.0), contrast=(1.1, 0.9, 1.0))
    out = apply_augment(s, p)
    # disparity 0 -> สองภาพเหมือนกัน ต้องยังเหมือนกันหลัง jitter
    assert np.array_equal(out.left, out.right)
    assert not np.array_equal(out.left, s.left)
