"""Two-channel complex images, centered FFTs, Cartesian masks and data consistency.

Images and spectra are plain ndarrays of shape ``(..., H, W, 2)`` where the
last axis holds the real and imaginary parts. Leading axes are treated as a
batch. The zero frequency of a spectrum sits at index ``(H // 2, W // 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

DEFAULT_CENTER_FRACTION = {4: 0.08, 8: 0.04}


def to_complex(arr):
    arr = np.asarray(arr)
    if arr.ndim < 3 or arr.shape[-1] != 2:
        raise ShapeError(f"expected (..., H, W, 2) array, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def to_channels(z, dtype=None):
    """Inverse of :func:`to_complex`."""
    if dtype is None:
        dtype = np.float32 if z.dtype == np.complex64 else np.float64
    out = np.empty(z.shape + (2,), dtype=dtype)
    out[..., 0] = z.real
    out[..., 1] = z.imag
    return out


def check_image(arr, min_size=8):
    arr = np.asarray(arr)
    if arr.ndim < 3 or arr.shape[-1] != 2:
        raise ShapeError(f"expected (..., H, W, 2) array, got shape {arr.shape}")
    if arr.shape[-3] < min_size or arr.shape[-2] < min_size:
        raise ShapeError(f"image extents must be >= {min_size}, got {arr.shape[-3:-1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("image contains non-finite values")
    return arr


def cfft2(z):
    """Centered orthonormal 2D DFT over the last two axes of a complex array."""
    z = np.fft.ifftshift(z, axes=(-2, -1))
    z = np.fft.fft2(z, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(z, axes=(-2, -1))


def cifft2(z):
    z = np.fft.ifftshift(z, axes=(-2, -1))
    z = np.fft.ifft2(z, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(z, axes=(-2, -1))


def fft2c(img):
    """Centered unitary FFT of a two-channel image.

    The output dtype follows the input (float32 stays float32).
    """
    img = np.asarray(img)
    if not np.all(np.isfinite(img)):
        raise DomainError("fft2c: input contains non-finite values")
    return to_channels(cfft2(to_complex(img)), img.dtype)


def ifft2c(k):
    k = np.asarray(k)
    if not np.all(np.isfinite(k)):
        raise DomainError("ifft2c: input contains non-finite values")
    return to_channels(cifft2(to_complex(k)), k.dtype)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Column mask over a Cartesian grid, identical for every row."""

    columns: np.ndarray
    acceleration: float
    center_fraction: float
    seed: int

    @property
    def width(self):
        return self.columns.shape[-1]

    @property
    def effective_acceleration(self):
        return self.width / max(int(self.columns.sum()), 1)

    def matrix(self, height):
        """Expand to the binary H x W matrix U."""
        return np.broadcast_to(self.columns.astype(np.float64), (height, self.width)).copy()

    def __eq__(self, other):
        return (isinstance(other, SamplingMask)
                and np.array_equal(self.columns, other.columns)
                and self.acceleration == other.acceleration
                and self.center_fraction == other.center_fraction
                and self.seed == other.seed)

    def __hash__(self):
        return hash((self.columns.tobytes(), self.acceleration, self.center_fraction, self.seed))


def center_block(width, center_fraction):
    """Slice of the always-sampled central columns."""
    n_low = max(int(np.floor(center_fraction * width)), 1)
    n_low = min(n_low, width)
    start = (width - n_low + 1) // 2
    return slice(start, start + n_low)


def make_cartesian_mask(width, acceleration, center_fraction=None, seed=0):
    """Random column mask in the style of the fastMRI ``RandomMaskFunc``.

    A centered block of ``floor(center_fraction * width)`` columns is always
    kept; every other column is kept independently with the probability that
    makes the expected number of sampled columns ``width / acceleration``.
    """
    if acceleration <= 1:
        raise ConfigError(f"acceleration factor must exceed 1, got {acceleration}")
    if center_fraction is None:
        center_fraction = DEFAULT_CENTER_FRACTION.get(int(acceleration), 0.08)
    if not 0 < center_fraction <= 1:
        raise ConfigError(f"center_fraction must lie in (0, 1], got {center_fraction}")
    block = center_block(width, center_fraction)
    n_low = block.stop - block.start
    if int(np.floor(center_fraction * width)) < 1:
        raise ConfigError("center block would be empty; raise center_fraction or width")

    columns = np.zeros(width, dtype=bool)
    if n_low < width:
        if acceleration * center_fraction >= 1:
            raise ConfigError("acceleration * center_fraction must be < 1")
        prob = (width / acceleration - n_low) / (width - n_low)
        rng = np.random.default_rng(seed)
        columns = rng.uniform(size=width) < prob
    columns[block] = True
    return SamplingMask(columns, float(acceleration), float(center_fraction), int(seed))


def _mask_columns(mask, width):
    cols = mask.columns if isinstance(mask, SamplingMask) else np.asarray(mask)
    cols = cols.astype(bool)
    if cols.shape[-1] != width:
        raise ShapeError(f"mask width {cols.shape[-1]} does not match data width {width}")
    return cols


def _row_mask(mask, width):
    """Mask broadcastable against a complex (..., H, W) array."""
    cols = _mask_columns(mask, width)
    return cols[..., None, :]


def forward_model(y, mask, noise_sigma=0.0, seed=0):
    """Simulate an under-sampled acquisition ``x = U * (fft2c(y) + noise)``.

    Noise is drawn per k-space entry and per channel with standard deviation
    ``noise_sigma`` before masking.
    """
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    y = check_image(y)
    k = fft2c(y)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        k = k + (noise_sigma * rng.standard_normal(k.shape)).astype(k.dtype)
    keep = _row_mask(mask, y.shape[-2])
    return k * keep[..., None]


def zero_fill(x, mask):
    x = np.asarray(x)
    keep = _row_mask(mask, x.shape[-2])
    return ifft2c(x * keep[..., None])


def dc_project(img, x, mask):
    """Hard data-consistency projection on two-channel arrays.

    Keeps the measured k-space ``x`` on sampled columns and the spectrum of
    ``img`` elsewhere. The transforms run in double precision and the result
    is cast back to the dtype of ``img``, so a float32 projection is
    idempotent to within one rounding step.
    """
    img = np.asarray(img)
    x = np.asarray(x)
    if img.shape != x.shape:
        raise ShapeError(f"image {img.shape} and k-space {x.shape} differ")
    keep = _row_mask(mask, img.shape[-2])
    k = np.where(keep, to_complex(x.astype(np.float64)), cfft2(to_complex(img.astype(np.float64))))
    return to_channels(cifft2(k), img.dtype)


def data_consistency(img, x, mask):
    """Validated :func:`dc_project`; any extent is accepted, only finiteness is enforced."""
    return dc_project(check_image(img, min_size=1), x, mask)


def band_masks(height, width, low_fraction=1 / 3):
    """Boolean (H, W) support of the centered low-frequency rectangle."""
    if not 0 < low_fraction <= 1:
        raise ConfigError(f"low_fraction must lie in (0, 1], got {low_fraction}")
    rows = center_block(height, low_fraction)
    cols = center_block(width, low_fraction)
    low = np.zeros((height, width), dtype=bool)
    low[rows, cols] = True
    return low


def band_split(k, low_fraction=1 / 3):
    """Split a spectrum into (low, high) parts with disjoint supports."""
    k = np.asarray(k)
    low = band_masks(k.shape[-3], k.shape[-2], low_fraction)[..., None]
    return k * low, k * ~low
