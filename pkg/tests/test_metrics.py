import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from rkflow.metrics import MetricError, l2_rel, latent_metrics, psnr, ssim


def reference_ssim(x, y, data_range):
    return structural_similarity(x, y, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=data_range)


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x, 1.0) == math.inf


def test_psnr_arithmetic():
    x = np.zeros((4, 4))
    assert psnr(x, x + 0.1, 1.0) == pytest.approx(20.0)


def test_psnr_constant_offset_on_image():
    x = np.random.default_rng(1).random((16, 16))
    assert psnr(x, x + 0.1, 1.0) == pytest.approx(20.0)


def test_psnr_bad_range():
    with pytest.raises(MetricError):
        psnr(np.zeros(3), np.ones(3), 0.0)


def test_shape_mismatch():
    with pytest.raises(MetricError):
        l2_rel(np.zeros(3), np.zeros(4))


def test_ssim_identical_is_one():
    x = np.random.default_rng(2).random((32, 32))
    assert ssim(x, x, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_ssim_anticorrelated_negative():
    x = np.random.default_rng(3).random((32, 32))
    assert ssim(x, 1.0 - x, 1.0) < 0


def test_ssim_matches_reference():
    rng = np.random.default_rng(4)
    x = rng.random((64, 64))
    y = x + rng.normal(0, 0.1, x.shape)
    assert abs(ssim(x, y, 1.0) - reference_ssim(x, y, 1.0)) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(11, 40), st.floats(0.01, 0.5))
def test_ssim_matches_reference_random(seed, size, noise):
    rng = np.random.default_rng(seed)
    x = rng.random((size, size + 3))
    y = np.clip(x + rng.normal(0, noise, x.shape), 0, 1)
    assert abs(ssim(x, y, 1.0) - reference_ssim(x, y, 1.0)) < 1e-4


def test_ssim_too_small():
    with pytest.raises(MetricError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((16, 16)), rng.random((16, 16))
    assert psnr(x, y, 1.0) == psnr(y, x, 1.0)
    assert ssim(x, y, 1.0) == pytest.approx(ssim(y, x, 1.0), abs=1e-12)


# Only the luminance term sees a common shift, and its change is quadratic in the
# local mean difference; small perturbations keep it below C1-level noise.
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.5e-3))
def test_ssim_shift_drift(seed, noise):
    rng = np.random.default_rng(seed)
    x = rng.random((16, 16))
    y = x + rng.normal(0, noise, x.shape)
    assert abs(ssim(x + 0.1, y + 0.1, 1.0) - ssim(x, y, 1.0)) < 1e-6


def test_ssim_shift_drift_quadratic():
    rng = np.random.default_rng(7)
    x = rng.random((16, 16))
    e = rng.normal(0, 1, x.shape)
    drift = [abs(ssim(x + 0.1, x + s * e + 0.1, 1.0) - ssim(x, x + s * e, 1.0)) for s in (0.01, 0.02)]
    assert 3.0 < drift[1] / drift[0] < 5.0


def test_l2_rel_values():
    assert l2_rel([1.0, 2.0], [1.0, 2.0]) == {"l2": 0.0, "rel": 0.0}
    assert l2_rel([3.0, 4.0], [0.0, 0.0]) == {"l2": 5.0, "rel": 1.0}


def test_l2_rel_homogeneity():
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal(10), rng.standard_normal(10)
    a, b = l2_rel(x, y), l2_rel(2 * x, 2 * y)
    assert b["l2"] == pytest.approx(2 * a["l2"])
    assert b["rel"] == pytest.approx(a["rel"])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    x, y, z = (rng.standard_normal(6) for _ in range(3))
    assert l2_rel(x, z)["l2"] <= l2_rel(x, y)["l2"] + l2_rel(y, z)["l2"] + 1e-12


def test_latent_metrics_small_grid():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((4, 8, 8))
    rep = latent_metrics(z, z + 0.01 * rng.standard_normal(z.shape))
    assert 0.9 < rep.ssim <= 1.0 and rep.psnr > 30
    exact = latent_metrics(z, z)
    assert exact.psnr == math.inf and exact.ssim == pytest.approx(1.0)


def test_latent_metrics_bad_rank():
    with pytest.raises(MetricError):
        latent_metrics(np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)))
