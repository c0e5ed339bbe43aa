"""Unrolled recurrent-transformer reconstruction network.

Three recurrent units run coarse to fine inside every unrolled iteration.
Unit ``i`` encodes its input image to an ``H/S_i x W/S_i x C`` feature, adds
the transformer block's response to its hidden state, decodes back to a
two-channel image and applies the data-consistency projection. A small
convolutional refine module fuses the unit outputs into the next iterate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kspace
from .attention import RSAConfig, init_rptl_params, rfb_forward
from .autodiff import functional as fn
from .autodiff.optim import ParamStore, trunc_normal
from .autodiff.tensor import Tensor, _make, add, as_tensor, concat_channels, relu
from .errors import ConfigError, ShapeError

UNIT_SCALES = {1: 4.0, 2: 2.0, 3: 0.5}


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    channels: int = 24
    unroll: int = 5
    window_size: int = 4
    rfb_depth: int = 2
    ru1_scales: tuple = (1, 3)
    ru2_scales: tuple = (1, 3)
    ru3_scales: tuple = (1, 3)
    heads_per_scale: int = 1
    mlp_ratio: float = 2.0
    units: tuple = (1, 2, 3)
    refine: bool = True
    attention: str = "rsa"
    lambda_init: float = 0.9

    def __post_init__(self):
        for name in ("ru1_scales", "ru2_scales", "ru3_scales", "units"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.unroll < 1:
            raise ConfigError(f"unroll length must be >= 1, got {self.unroll}")
        if self.channels < 1 or self.rfb_depth < 1:
            raise ConfigError("channels and rfb_depth must be positive")
        if 1 not in self.units or any(u not in UNIT_SCALES for u in self.units):
            raise ConfigError(f"units must include 1 and come from {{1, 2, 3}}, got {self.units}")
        if list(self.units) != sorted(set(self.units)):
            raise ConfigError(f"units must be strictly increasing, got {self.units}")
        if self.attention not in ("rsa", "mhsa"):
            raise ConfigError(f"attention must be 'rsa' or 'mhsa', got {self.attention!r}")
        for i in self.units:
            h, w = self.feature_size(i)
            if h * UNIT_SCALES[i] != self.height or w * UNIT_SCALES[i] != self.width:
                raise ConfigError(f"image {self.height}x{self.width} is not divisible by scale of RU{i}")
            if h % self.window_size or w % self.window_size:
                raise ConfigError(f"RU{i} feature {h}x{w} is not divisible by window {self.window_size}")
            self.rsa(i)

    def feature_size(self, i):
        s = UNIT_SCALES[i]
        return int(self.height / s), int(self.width / s)

    def rsa(self, i):
        cfg = RSAConfig(self.channels, self.window_size, getattr(self, f"ru{i}_scales"),
                        self.heads_per_scale, self.mlp_ratio, True, self.lambda_init)
        return cfg.standard() if self.attention == "mhsa" else cfg

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def encoder_plan(i, channels):
    """Layer list ``(cin, cout, stride, transposed)`` for unit ``i``'s encoder."""
    s = UNIT_SCALES[i]
    if s >= 1:
        n = int(round(math.log2(s)))
        plan = [(2, channels, 2, False)] + [(channels, channels, 2, False)] * (n - 1)
    else:
        n = int(round(math.log2(1 / s)))
        plan = [(2, channels, 2, True)] + [(channels, channels, 2, True)] * (n - 1)
    while len(plan) < 2:
        plan.append((channels, channels, 1, False))
    return plan


def decoder_plan(i, channels):
    """Mirror of the encoder followed by a stride-1 projection to 2 channels."""
    plan = []
    for _, _, stride, transposed in reversed(encoder_plan(i, channels)):
        plan.append((channels, channels, stride, (not transposed) if stride == 2 else False))
    return plan + [(channels, 2, 1, False)]


def _add_conv(store, name, cin, cout, rng, k=3):
    store.add(f"{name}.weight", trunc_normal(rng, (k, k, cin, cout), (k * k * cin) ** -0.5))
    store.add(f"{name}.bias", np.zeros(cout))


def init_params(config, seed=0, dtype=np.float32):
    """Deterministic parameter store for ``config``."""
    config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore(seed, dtype)
    c = config.channels
    for i in config.units:
        for j, (cin, cout, _, _) in enumerate(encoder_plan(i, c)):
            _add_conv(store, f"ru{i}.enc.conv{j}", cin, cout, rng)
        rsa_cfg = config.rsa(i)
        for layer in range(config.rfb_depth):
            init_rptl_params(store, f"ru{i}.rfb.layer{layer}", rsa_cfg, rng)
        plan = decoder_plan(i, c)
        for j, (cin, cout, _, _) in enumerate(plan[:-1]):
            _add_conv(store, f"ru{i}.dec.conv{j}", cin, cout, rng)
        _add_conv(store, f"ru{i}.dec.out", c, 2, rng)
    if config.refine:
        _add_conv(store, "rm.conv0", 2 * len(config.units), c, rng)
        _add_conv(store, "rm.conv1", c, 2, rng)
    return store


def count_params(params):
    return params.count()


# ----------------------------------------------------------------------------
# data consistency as a differentiable op


def _mask_array(mask, batch, width):
    cols = mask.columns if isinstance(mask, kspace.SamplingMask) else np.asarray(mask)
    cols = cols.astype(bool)
    if cols.ndim == 1:
        cols = np.broadcast_to(cols, (batch, width))
    if cols.shape != (batch, width):
        raise ShapeError(f"mask shape {cols.shape} does not match batch {batch} x width {width}")
    return cols


def dc_layer(y, x, mask):
    """Replace the spectrum of ``y`` by measured ``x`` on sampled columns.

    The map is affine in ``y`` with a self-adjoint linear part (a unitary
    FFT sandwiching a real diagonal mask), so the gradient is the same
    projection onto unsampled columns applied to the incoming gradient.
    """
    y = as_tensor(y)
    b, _, w, _ = y.shape
    keep = _mask_array(mask, b, w)[:, None, :]
    xc = kspace.to_complex(np.asarray(x, dtype=np.float64))
    k = np.where(keep, xc, kspace.cfft2(kspace.to_complex(y.data.astype(np.float64))))
    out = kspace.to_channels(kspace.cifft2(k), y.dtype)

    def back(g):
        gk = np.where(keep, 0, kspace.cfft2(kspace.to_complex(g)))
        return (kspace.to_channels(kspace.cifft2(gk), g.dtype),)

    return _make(out, (y,), back)


# ----------------------------------------------------------------------------
# forward pass


@dataclass
class RecurrentState:
    """Per-unit hidden features and per-layer correlation tensors."""

    h: dict = field(default_factory=dict)
    c: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, config, batch, dtype=np.float32):
        h, c = {}, {}
        for i in config.units:
            fh, fw = config.feature_size(i)
            h[i] = Tensor(np.zeros((batch, fh, fw, config.channels), dtype=dtype))
            c[i] = [None] * config.rfb_depth
        return cls(h, c)


def _conv(x, params, name, stride=1, transposed=False):
    return fn.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride,
                     padding="same", transposed=transposed)


def encoder_forward(i, y_in, params, config):
    plan = encoder_plan(i, config.channels)
    x = y_in
    for j, (_, _, stride, transposed) in enumerate(plan):
        x = _conv(x, params, f"ru{i}.enc.conv{j}", stride, transposed)
        if j < len(plan) - 1:
            x = relu(x)
    return x


def decoder_forward(i, feat, params, config):
    plan = decoder_plan(i, config.channels)
    x = feat
    for j, (_, _, stride, transposed) in enumerate(plan[:-1]):
        x = relu(_conv(x, params, f"ru{i}.dec.conv{j}", stride, transposed))
    return _conv(x, params, f"ru{i}.dec.out")


def ru_forward(i, y_in, state, x, mask, params, config, trace=None):
    """One recurrent unit; returns the data-consistent output and the new state."""
    h = state.h[i]
    expected = (y_in.shape[0],) + config.feature_size(i) + (config.channels,)
    if h.shape != expected:
        raise ShapeError(f"RU{i} hidden state {h.shape} != {expected}")
    block, c_new = rfb_forward(h, state.c[i], params, f"ru{i}.rfb", config.rsa(i), config.rfb_depth, trace)
    feat = add(block, encoder_forward(i, y_in, params, config))
    y_out = dc_layer(decoder_forward(i, feat, params, config), x, mask)
    new_state = replace(state, h={**state.h, i: feat}, c={**state.c, i: c_new})
    return y_out, new_state


def refine_module(outputs, x, mask, params):
    """Fuse unit outputs: two convs plus a residual from the last unit, then DC."""
    z = relu(_conv(concat_channels(outputs), params, "rm.conv0"))
    z = _conv(z, params, "rm.conv1")
    return dc_layer(add(z, outputs[-1]), x, mask)


def _batched_inputs(x, mask, dtype):
    x = np.asarray(x, dtype=dtype)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    return x, _mask_array(mask, x.shape[0], x.shape[2]), squeeze


def model_forward(x, mask, params, config, unroll=None, trace=None, return_units=False):
    """Unrolled reconstruction from under-sampled k-space ``x``.

    Returns ``(final, iterates)`` where ``iterates[t]`` is the image after
    iteration ``t + 1``. With ``return_units`` a third item lists the unit
    outputs of every iteration.
    """
    T = config.unroll if unroll is None else unroll
    if T < 1:
        raise ConfigError(f"unroll length must be >= 1, got {T}")
    x, cols, squeeze = _batched_inputs(x, mask, params.dtype)
    b, h, w, _ = x.shape
    if (h, w) != (config.height, config.width):
        raise ShapeError(f"k-space {h}x{w} does not match model geometry {config.height}x{config.width}")

    y = Tensor(kspace.zero_fill(x, cols))
    state = RecurrentState.zeros(config, b, params.dtype)
    iterates, unit_log = [], []
    for _ in range(T):
        outputs = []
        y_in = y
        for i in config.units:
            y_in, state = ru_forward(i, y_in, state, x, cols, params, config, trace)
            outputs.append(y_in)
        y = refine_module(outputs, x, cols, params) if config.refine else outputs[-1]
        iterates.append(y)
        unit_log.append(outputs)
    if squeeze:
        iterates = [it.reshape(it.shape[1:]) for it in iterates]
        unit_log = [[o.reshape(o.shape[1:]) for o in outs] for outs in unit_log]
    if return_units:
        return iterates[-1], iterates, unit_log
    return iterates[-1], iterates


def reconstruct(x, mask, params, config, unroll=None):
    """Inference helper returning a numpy array; records no graph."""
    final, _ = model_forward(x, mask, params.frozen(), config, unroll)
    return final.data
