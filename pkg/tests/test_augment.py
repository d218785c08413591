import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import scalar_bilinear
from remind.augment import (CropConfig, MixupConfig, crop_batch, mixup_pair, mixup_sets,
                            random_resized_crop, resize_bilinear, sample_beta,
                            sample_crop_window)


def test_mixup_endpoints(rng):
    za, zb = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
    ya, yb = np.eye(3)[0], np.eye(3)[2]
    z, y = mixup_pair(za, ya, zb, yb, 1.0)
    np.testing.assert_array_equal(z, za)
    np.testing.assert_array_equal(y, ya)
    z, y = mixup_pair(za, ya, zb, yb, 0.0)
    np.testing.assert_array_equal(z, zb)
    np.testing.assert_array_equal(y, yb)


def test_mixup_midpoint():
    z, y = mixup_pair(np.zeros((2, 2, 3)), [1, 0], np.full((2, 2, 3), 2.0), [0, 1], 0.5)
    np.testing.assert_array_equal(z, 1.0)
    np.testing.assert_array_equal(y, [0.5, 0.5])


def test_mixup_rejects_bad_input():
    with pytest.raises(ValueError):
        mixup_pair(np.zeros(2), [1, 0], np.zeros(3), [0, 1], 0.5)
    with pytest.raises(ValueError):
        mixup_pair(np.zeros(2), [1, 0], np.zeros(2), [0, 1], 1.5)
    with pytest.raises(ValueError):
        MixupConfig(alpha=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), r=st.integers(1, 8))
def test_mixup_sets_are_convex_combinations(seed, r):
    rng = np.random.default_rng(seed)
    za = rng.normal(size=(r, 2, 2, 3)).astype(np.float32)
    zb = rng.normal(size=(r, 2, 2, 3)).astype(np.float32)
    ya = np.eye(4)[rng.integers(0, 4, r)]
    yb = np.eye(4)[rng.integers(0, 4, r)]
    z, y, lam = mixup_sets(za, ya, zb, yb, MixupConfig(0.1), rng)
    assert np.all((lam >= 0) & (lam <= 1))
    L = lam[:, None, None, None]
    np.testing.assert_allclose(z, (L * za + (1 - L) * zb).astype(np.float32), rtol=0, atol=1e-6)
    np.testing.assert_allclose(y, lam[:, None] * ya + (1 - lam[:, None]) * yb, rtol=0, atol=1e-15)
    np.testing.assert_allclose(y.sum(1), 1.0, atol=1e-6)
    assert np.all(y >= 0)


def test_beta_symmetric_mean():
    lam = sample_beta(0.1, np.random.default_rng(0), 100_000)
    assert abs(lam.mean() - 0.5) < 0.01
    assert np.all((lam >= 0) & (lam <= 1))


def test_small_alpha_concentrates_at_endpoints():
    def edge_mass(alpha):
        lam = sample_beta(alpha, np.random.default_rng(1), 50_000)
        return np.mean((lam < 0.05) | (lam > 0.95))
    assert edge_mass(0.1) > edge_mass(1.0)
    # Beta(1, 1) is uniform, so its edge mass is about 0.1
    assert abs(edge_mass(1.0) - 0.1) < 0.01


def test_beta_scalar_draw():
    assert isinstance(sample_beta(0.1, np.random.default_rng(0)), float)


def test_identity_crop(rng):
    t = rng.normal(size=(4, 4, 3)).astype(np.float32)
    cfg = CropConfig(1.0, 1.0, 1.0, 1.0)
    np.testing.assert_array_equal(random_resized_crop(t, cfg, rng), t)
    np.testing.assert_array_equal(random_resized_crop(t, CropConfig(enabled=False), rng), t)


def test_constant_tensor_stays_constant(rng):
    t = np.full((5, 5, 2), 3.25, np.float32)
    for _ in range(20):
        np.testing.assert_allclose(random_resized_crop(t, CropConfig(0.2, 0.9), rng), 3.25, atol=1e-6)


def test_ramp_matches_scalar_oracle():
    yy, xx = np.mgrid[0:4, 0:4]
    t = np.stack([yy + 4 * xx, 2.0 * yy - xx], axis=-1).astype(np.float32)
    cfg = CropConfig(0.3, 0.8)
    for seed in range(10):
        top, left, h, w = sample_crop_window(4, cfg, np.random.default_rng(seed))
        want = scalar_bilinear(t[top:top + h, left:left + w].astype(np.float64), 4, 4)
        got = random_resized_crop(t, cfg, np.random.default_rng(seed))
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_resize_matches_oracle(rng):
    x = rng.normal(size=(3, 5, 2))
    np.testing.assert_allclose(resize_bilinear(x, 7, 4), scalar_bilinear(x, 7, 4), atol=1e-12)


def test_window_fallback_is_identity():
    # a 1x1 window of aspect 100 can never fit, so every attempt fails
    cfg = CropConfig(0.5, 0.5, 100.0, 100.0)
    assert sample_crop_window(3, cfg, np.random.default_rng(0)) == (0, 0, 3, 3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), m=st.integers(1, 6))
def test_crop_stays_within_value_range(seed, m):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(3, m, m, 2)).astype(np.float32)
    out = crop_batch(X, CropConfig(0.1, 1.0, 0.5, 2.0), rng)
    assert out.shape == X.shape
    for a, b in zip(out, X):
        assert a.min() >= b.min() - 1e-6 and a.max() <= b.max() + 1e-6
