"""Random complex ellipse phantoms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MAX_MAGNITUDE = 1.5


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    min_ellipses: int = 6
    max_ellipses: int = 12
    intensity_range: tuple = (0.2, 1.0)
    phase_order: int = 2
    seed: int = 0


def _phase_field(rng, yy, xx, order):
    """Random polynomial of total degree ``order`` with values in [-pi, pi]."""
    terms = [(p, q) for p in range(order + 1) for q in range(order + 1 - p)]
    # |x|, |y| <= 1 so each monomial is bounded by 1 and the sum by len(terms) * bound
    coeffs = rng.uniform(-1.0, 1.0, size=len(terms)) * (np.pi / len(terms))
    phase = np.zeros_like(xx)
    for c, (p, q) in zip(coeffs, terms):
        phase += c * xx ** p * yy ** q
    return phase


def gen_phantom(spec):
    """Sum of rotated ellipses times a smooth phase; ``(H, W, 2)`` float64."""
    if spec.height < 16 or spec.width < 16:
        raise ConfigError(f"phantom needs H, W >= 16, got {spec.height}x{spec.width}")
    if not 1 <= spec.min_ellipses <= spec.max_ellipses:
        raise ConfigError("ellipse count range is empty")
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, spec.height), np.linspace(-1, 1, spec.width), indexing="ij")

    n = int(rng.integers(spec.min_ellipses, spec.max_ellipses + 1))
    lo, hi = spec.intensity_range
    mag = np.zeros((spec.height, spec.width))
    for _ in range(n):
        cy, cx = rng.uniform(-0.6, 0.6, size=2)
        ay, ax = rng.uniform(0.08, 0.45, size=2)
        theta = rng.uniform(0, np.pi)
        value = rng.uniform(lo, hi)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        mag[(u / ax) ** 2 + (v / ay) ** 2 <= 1.0] += value
    np.clip(mag, 0.0, MAX_MAGNITUDE, out=mag)

    phase = _phase_field(rng, yy, xx, spec.phase_order)
    out = np.empty((spec.height, spec.width, 2))
    out[..., 0] = mag * np.cos(phase)
    out[..., 1] = mag * np.sin(phase)
    return out
