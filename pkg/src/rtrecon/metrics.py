"""PSNR, SSIM and k-space band analysis on magnitude images."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import uniform_filter

from . import kspace
from .errors import DomainError, ShapeError

IDENTICAL = math.inf  # PSNR sentinel for a zero-error pair


def magnitude(img):
    img = np.asarray(img, dtype=np.float64)
    return np.hypot(img[..., 0], img[..., 1])


def format_psnr(value):
    return "identical" if value == IDENTICAL else f"{value:.4f}"


def psnr(recon, gt, data_range):
    """Peak SNR in dB, or :data:`IDENTICAL` when the images match exactly."""
    recon = np.asarray(recon, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if recon.shape != gt.shape:
        raise ShapeError(f"psnr shapes differ: {recon.shape} vs {gt.shape}")
    if not data_range > 0:
        raise DomainError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((recon - gt) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim(recon, gt, data_range, win_size=7, k1=0.01, k2=0.03):
    """Mean SSIM over every fully-contained ``win_size`` square window.

    Local statistics use a uniform window with unbiased (N - 1) variances,
    matching the scikit-image convention used by fastMRI evaluations.
    """
    x = np.asarray(recon, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"ssim needs two equal 2D images, got {x.shape} and {y.shape}")
    if min(x.shape) < win_size:
        raise DomainError(f"images must be at least {win_size}x{win_size}, got {x.shape}")
    if not data_range > 0:
        raise DomainError(f"data_range must be positive, got {data_range}")
    n = win_size * win_size
    cov_norm = n / (n - 1)
    ux = uniform_filter(x, win_size)
    uy = uniform_filter(y, win_size)
    vx = cov_norm * (uniform_filter(x * x, win_size) - ux * ux)
    vy = cov_norm * (uniform_filter(y * y, win_size) - uy * uy)
    vxy = cov_norm * (uniform_filter(x * y, win_size) - ux * uy)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    pad = (win_size - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def band_images(img, low_fraction=1 / 3):
    """Image-domain (low, high) components of a two-channel image."""
    low, high = kspace.band_split(kspace.fft2c(np.asarray(img, dtype=np.float64)), low_fraction)
    return kspace.ifft2c(low), kspace.ifft2c(high)


def complex_mse(a, b):
    """Mean over pixels of |a - b|^2 for two-channel images."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(np.sum(d * d, axis=-1)))


def band_mse(recon, gt, low_fraction=1 / 3):
    """(low, high) complex MSEs; they add up to :func:`complex_mse`."""
    rl, rh = band_images(recon, low_fraction)
    gl, gh = band_images(gt, low_fraction)
    return complex_mse(rl, gl), complex_mse(rh, gh)


def band_psnr(recon, gt, low_fraction=1 / 3):
    """PSNR of band-limited magnitudes; peak is the full ground-truth magnitude max."""
    peak = float(magnitude(gt).max())
    rl, rh = band_images(recon, low_fraction)
    gl, gh = band_images(gt, low_fraction)
    return (psnr(magnitude(rl), magnitude(gl), peak),
            psnr(magnitude(rh), magnitude(gh), peak))


def kspace_band_report(recons, gts, low_fraction=1 / 3):
    """Per-sample band PSNRs plus their means.

    Returns ``{"rows": [(index, low_db, high_db), ...], "mean_low": .., "mean_high": ..}``.
    """
    if len(recons) != len(gts):
        raise ShapeError(f"{len(recons)} reconstructions for {len(gts)} ground truths")
    rows = []
    for idx, (r, g) in enumerate(zip(recons, gts)):
        lo, hi = band_psnr(r, g, low_fraction)
        rows.append((idx, lo, hi))

    return {"rows": rows, "mean_low": finite_mean([r[1] for r in rows]),
            "mean_high": finite_mean([r[2] for r in rows]), "low_fraction": low_fraction}


def finite_mean(values):
    """Mean ignoring :data:`IDENTICAL` entries; IDENTICAL if nothing else is left."""
    finite = [v for v in values if v != IDENTICAL]
    return float(np.mean(finite)) if finite else IDENTICAL
