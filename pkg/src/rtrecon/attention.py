"""Windowed recurrent scale-wise attention and the transformer layers built on it.

Features are NHWC tensors. A transformer layer tiles the feature map into
non-overlapping K x K windows (cyclically shifted by K/2 on odd layers),
runs multi-head attention inside each window and merges the windows back.

Each head works at one spatial scale: queries come from the raw window,
keys and values from the window after an s x s box filter. The pre-softmax
correlation of every head is blended with the correlation the same layer
produced on the previous unrolled iteration::

    c_next = lam * Q K^T / sqrt(d) + (1 - lam) * c_prev
    out    = softmax(c_next) V
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import functional as fn
from .autodiff.optim import trunc_normal
from .autodiff.tensor import Tensor, add, gelu, linear, matmul, mul, reshape, roll, scale, swap_last, transpose
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class RSAConfig:
    embed_dim: int = 24
    window_size: int = 4
    scales: tuple = (1, 3)
    heads_per_scale: int = 1
    mlp_ratio: float = 2.0
    recurrent: bool = True
    lambda_init: float = 0.9
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.heads_per_scale < 1 or not self.scales:
            raise ConfigError("need at least one attention head")
        for s in self.scales:
            if s % 2 == 0 or s < 1 or s > self.window_size:
                raise ConfigError(f"scale {s} must be odd and <= window size {self.window_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")

    @property
    def head_scales(self):
        return tuple(s for s in self.scales for _ in range(self.heads_per_scale))

    @property
    def num_heads(self):
        return len(self.scales) * self.heads_per_scale

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self):
        return int(round(self.embed_dim * self.mlp_ratio))

    def standard(self):
        """Single-scale heads without the correlation recurrence (plain MHSA)."""
        return RSAConfig(self.embed_dim, self.window_size, (1,) * len(self.scales),
                         self.heads_per_scale, self.mlp_ratio, False, self.lambda_init, self.ln_eps)


@dataclass
class WindowGrid:
    """Windows of shape ``(num_windows, K*K, C)`` plus the geometry to undo them."""

    windows: Tensor
    batch: int
    height: int
    width: int
    window: int
    shift: int
    batched: bool = True

    @property
    def num_windows(self):
        return self.windows.shape[0]


def window_partition(feat, window, shift=0):
    """Roll by ``(-shift, -shift)`` and tile into row-major K x K windows."""
    batched = feat.ndim == 4
    if not batched:
        feat = reshape(feat, (1,) + feat.shape)
    b, h, w, c = feat.shape
    if h % window or w % window:
        raise ShapeError(f"window {window} does not divide feature size {h}x{w}")
    if shift:
        feat = roll(feat, (-shift, -shift), (1, 2))
    x = reshape(feat, (b, h // window, window, w // window, window, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (b * (h // window) * (w // window), window * window, c))
    return WindowGrid(x, b, h, w, window, shift, batched)


def window_merge(grid):
    """Exact inverse of :func:`window_partition`."""
    b, h, w, k = grid.batch, grid.height, grid.width, grid.window
    n, t, c = grid.windows.shape
    if n != b * (h // k) * (w // k) or t != k * k:
        raise ShapeError(f"window tensor {grid.windows.shape} does not match geometry {b}x{h}x{w}/K={k}")
    x = reshape(grid.windows, (b, h // k, w // k, k, k, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (b, h, w, c))
    if grid.shift:
        x = roll(x, (grid.shift, grid.shift), (1, 2))
    if not grid.batched:
        x = reshape(x, (h, w, c))
    return x


@lru_cache(maxsize=None)
def pooling_matrix(window, s):
    """(K*K, K*K) operator of an s x s mean filter over a K x K grid.

    Border positions average over the in-bounds part of their neighbourhood.
    """
    if s % 2 == 0 or s < 1:
        raise ConfigError(f"scale must be a positive odd integer, got {s}")
    if s > window:
        raise ConfigError(f"scale {s} exceeds window size {window}")
    r = s // 2
    a = np.zeros((window * window, window * window))
    for i in range(window):
        for j in range(window):
            rows = range(max(i - r, 0), min(i + r, window - 1) + 1)
            cols = range(max(j - r, 0), min(j + r, window - 1) + 1)
            idx = [u * window + v for u in rows for v in cols]
            a[i * window + j, idx] = 1.0 / len(idx)
    a.flags.writeable = False
    return a


def scale_aggregate(window_feat, s, window=None):
    """Box-filter a ``(..., K*K, C)`` window feature at scale ``s`` (stride 1)."""
    t = window_feat.shape[-2]
    k = window if window is not None else int(round(math.sqrt(t)))
    if k * k != t:
        raise ShapeError(f"{t} tokens do not form a square window")
    a = pooling_matrix(k, s).astype(window_feat.dtype)
    return matmul(Tensor(a), window_feat)


def _head_pooling(cfg, dtype):
    k = cfg.window_size
    mats = [pooling_matrix(k, s) for s in cfg.head_scales]
    return np.stack(mats)[None].astype(dtype)  # (1, heads, T, T)


def init_rsa_params(store, prefix, cfg, rng):
    c, hd = cfg.embed_dim, cfg.num_heads * cfg.head_dim
    std = c ** -0.5
    store.add(f"{prefix}.q.weight", trunc_normal(rng, (c, hd), std))
    store.add(f"{prefix}.k.weight", trunc_normal(rng, (c, hd), std))
    store.add(f"{prefix}.v.weight", trunc_normal(rng, (c, hd), std))
    store.add(f"{prefix}.proj.weight", trunc_normal(rng, (hd, c), hd ** -0.5))
    store.add(f"{prefix}.proj.bias", np.zeros(c))
    if cfg.recurrent:
        store.add(f"{prefix}.lambda", np.full(cfg.num_heads, cfg.lambda_init))


def init_rptl_params(store, prefix, cfg, rng):
    c, hidden = cfg.embed_dim, cfg.hidden_dim
    store.add(f"{prefix}.norm1.gamma", np.ones(c))
    store.add(f"{prefix}.norm1.beta", np.zeros(c))
    init_rsa_params(store, f"{prefix}.attn", cfg, rng)
    store.add(f"{prefix}.norm2.gamma", np.ones(c))
    store.add(f"{prefix}.norm2.beta", np.zeros(c))
    store.add(f"{prefix}.mlp.fc1.weight", trunc_normal(rng, (c, hidden), c ** -0.5))
    store.add(f"{prefix}.mlp.fc1.bias", np.zeros(hidden))
    store.add(f"{prefix}.mlp.fc2.weight", trunc_normal(rng, (hidden, c), hidden ** -0.5))
    store.add(f"{prefix}.mlp.fc2.bias", np.zeros(c))


def _split_heads(x, heads):
    n, t, hd = x.shape
    return transpose(reshape(x, (n, t, heads, hd // heads)), (0, 2, 1, 3))


def rsa(grid, c, params, prefix, cfg, trace=None):
    """Recurrent scale-wise attention over every window of ``grid``.

    ``c`` is the previous correlation tensor ``(num_windows, heads, T, T)`` or
    None for the all-zero initial state. Returns the attended windows and the
    new correlation (None when ``cfg.recurrent`` is off).
    """
    f = grid.windows
    n, t, _ = f.shape
    heads, d = cfg.num_heads, cfg.head_dim
    if t != cfg.window_size ** 2:
        raise ShapeError(f"windows hold {t} tokens, config expects {cfg.window_size ** 2}")
    if c is not None and c.shape != (n, heads, t, t):
        raise ShapeError(f"correlation state {c.shape} != {(n, heads, t, t)}")

    q = _split_heads(linear(f, params[f"{prefix}.q.weight"]), heads)
    k = _split_heads(linear(f, params[f"{prefix}.k.weight"]), heads)
    v = _split_heads(linear(f, params[f"{prefix}.v.weight"]), heads)
    if any(s > 1 for s in cfg.head_scales):
        pool = Tensor(_head_pooling(cfg, f.dtype))
        k = matmul(pool, k)
        v = matmul(pool, v)

    corr = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(d))
    if cfg.recurrent:
        lam = reshape(params[f"{prefix}.lambda"], (1, heads, 1, 1))
        c_next = mul(lam, corr)
        if c is not None:
            c_next = add(c_next, mul(add(scale(lam, -1.0), 1.0), c))
    else:
        c_next = corr
    attn = fn.softmax(c_next, axis=-1)
    if trace is not None:
        trace.append({"event": "attention", "prefix": prefix, "attn": attn.data})
    out = matmul(attn, v)
    out = reshape(transpose(out, (0, 2, 1, 3)), (n, t, heads * d))
    out = linear(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])
    new_grid = WindowGrid(out, grid.batch, grid.height, grid.width, grid.window, grid.shift, grid.batched)
    return new_grid, (c_next if cfg.recurrent else None)


def layer_shift(cfg, layer_idx):
    return 0 if layer_idx % 2 == 0 else cfg.window_size // 2


def rptl_forward(h, c, params, prefix, cfg, layer_idx, trace=None):
    """Pre-norm transformer layer: attention residual, then MLP residual."""
    shift = layer_shift(cfg, layer_idx)
    if trace is not None:
        trace.append({"event": "partition", "prefix": prefix, "shift": shift})
    y = fn.layer_norm(h, params[f"{prefix}.norm1.gamma"], params[f"{prefix}.norm1.beta"], cfg.ln_eps)
    grid, c_next = rsa(window_partition(y, cfg.window_size, shift), c, params, f"{prefix}.attn", cfg, trace)
    h = add(h, window_merge(grid))
    y = fn.layer_norm(h, params[f"{prefix}.norm2.gamma"], params[f"{prefix}.norm2.beta"], cfg.ln_eps)
    y = gelu(linear(y, params[f"{prefix}.mlp.fc1.weight"], params[f"{prefix}.mlp.fc1.bias"]))
    y = linear(y, params[f"{prefix}.mlp.fc2.weight"], params[f"{prefix}.mlp.fc2.bias"])
    return add(h, y), c_next


def rfb_forward(h, c_list, params, prefix, cfg, depth, trace=None):
    """Stack of ``depth`` layers, each threading its own correlation state."""
    if len(c_list) != depth:
        raise ConfigError(f"expected {depth} correlation states, got {len(c_list)}")
    new_states = []
    for i, c in enumerate(c_list):
        h, c = rptl_forward(h, c, params, f"{prefix}.layer{i}", cfg, i, trace)
        new_states.append(c)
    return h, new_states
