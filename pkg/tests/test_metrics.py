import math

import numpy as np
import pytest

from oracles import ssim_loops
from rtrecon import kspace, metrics
from rtrecon.errors import DomainError, ShapeError


def test_psnr_cases():
    rng = np.random.default_rng(0)
    a = rng.random((16, 16))
    assert metrics.psnr(a, a, 1.0) == metrics.IDENTICAL
    assert metrics.format_psnr(metrics.IDENTICAL) == "identical"
    assert metrics.psnr(a + 0.1, a, 1.0) == pytest.approx(20.0, abs=1e-10)
    b = rng.random((16, 16))
    expected = 10 * math.log10(2.0 ** 2 / np.mean((a - b) ** 2))
    assert abs(metrics.psnr(a, b, 2.0) - expected) <= 1e-10
    assert metrics.psnr(a, b, 2.0) == metrics.psnr(b, a, 2.0)
    with pytest.raises(DomainError):
        metrics.psnr(a, b, 0.0)
    with pytest.raises(ShapeError):
        metrics.psnr(a, b[:8], 1.0)


def test_ssim_matches_loop_oracle_on_9x9():
    rng = np.random.default_rng(1)
    x, y = rng.random((9, 9)), rng.random((9, 9))
    assert abs(metrics.ssim(x, y, 1.0) - ssim_loops(x, y, 1.0)) <= 1e-8
    x, y = rng.random((20, 13)), rng.random((20, 13))
    assert abs(metrics.ssim(x, y, 1.3) - ssim_loops(x, y, 1.3)) <= 1e-8


def test_ssim_matches_scikit_image():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(2)
    x = rng.random((32, 32))
    y = x + 0.1 * rng.standard_normal((32, 32))
    ref = skm.structural_similarity(x, y, data_range=1.0, win_size=7)
    # skimage averages over the valid region as well after cropping (win-1)/2
    assert abs(metrics.ssim(x, y, 1.0) - ref) <= 1e-8


def test_ssim_identity_and_noise():
    rng = np.random.default_rng(3)
    gt = np.full((32, 32), 0.5)
    assert metrics.ssim(gt, gt, 1.0) == pytest.approx(1.0, abs=1e-12)
    noisy = gt + rng.standard_normal((32, 32))
    # observed about 0.001
    assert metrics.ssim(noisy, gt, 1.0) < 0.5
    a = rng.random((16, 16))
    assert metrics.ssim(a, 1 - a, 1.0) >= -1.0


def test_ssim_errors():
    with pytest.raises(DomainError):
        metrics.ssim(np.zeros((6, 9)), np.zeros((6, 9)), 1.0)
    with pytest.raises(ShapeError):
        metrics.ssim(np.zeros((9, 9)), np.zeros((9, 10)), 1.0)
    with pytest.raises(DomainError):
        metrics.ssim(np.zeros((9, 9)), np.zeros((9, 9)), 0.0)


def test_band_mse_adds_up():
    rng = np.random.default_rng(4)
    for _ in range(50):
        r, g = rng.standard_normal((2, 24, 24, 2))
        lo, hi = metrics.band_mse(r, g)
        assert abs(lo + hi - metrics.complex_mse(r, g)) <= 1e-6


def test_band_report_cases():
    rng = np.random.default_rng(5)
    gts = [rng.standard_normal((24, 24, 2)) for _ in range(3)]
    rep = metrics.kspace_band_report(gts, gts)
    assert rep["mean_low"] == rep["mean_high"] == metrics.IDENTICAL
    low_only = [kspace.ifft2c(kspace.band_split(kspace.fft2c(g), 1 / 3)[0]) for g in gts]
    rep = metrics.kspace_band_report(low_only, gts)
    for _, lo, hi in rep["rows"]:
        assert lo == metrics.IDENTICAL or lo > 250
        assert math.isfinite(hi) and hi < 40
    with pytest.raises(ShapeError):
        metrics.kspace_band_report(gts[:2], gts)


def test_band_psnr_peak_is_full_gt_max():
    rng = np.random.default_rng(6)
    g = rng.standard_normal((16, 16, 2))
    r = g + 0.01 * rng.standard_normal(g.shape)
    peak = metrics.magnitude(g).max()
    rl, rh = metrics.band_images(r)
    gl, gh = metrics.band_images(g)
    lo, hi = metrics.band_psnr(r, g)
    assert lo == pytest.approx(metrics.psnr(metrics.magnitude(rl), metrics.magnitude(gl), peak), abs=1e-12)
    assert hi == pytest.approx(metrics.psnr(metrics.magnitude(rh), metrics.magnitude(gh), peak), abs=1e-12)


def test_finite_mean():
    assert metrics.finite_mean([1.0, metrics.IDENTICAL, 3.0]) == 2.0
    assert metrics.finite_mean([metrics.IDENTICAL]) == metrics.IDENTICAL
