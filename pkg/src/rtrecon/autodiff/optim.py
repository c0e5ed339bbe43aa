"""Parameter storage, initialization and the Adam optimizer."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, UsageError
from .tensor import Tensor


class ParamStore:
    """Ordered mapping of unique names to trainable tensors."""

    def __init__(self, rng_seed=0, dtype=np.float32):
        self.records = OrderedDict()
        self.rng_seed = int(rng_seed)
        self.dtype = np.dtype(dtype)

    def add(self, name, data):
        if name in self.records:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self.records[name] = t
        return t

    def __getitem__(self, name):
        return self.records[name]

    def __contains__(self, name):
        return name in self.records

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def items(self):
        return self.records.items()

    def names(self):
        return list(self.records)

    def count(self):
        return int(sum(t.size for t in self.records.values()))

    def zero_grad(self):
        for t in self.records.values():
            t.grad = None

    def astype(self, dtype):
        """Copy with every record cast to ``dtype`` (still trainable)."""
        out = ParamStore(self.rng_seed, dtype)
        for name, t in self.records.items():
            out.add(name, t.data)
        return out

    def frozen(self):
        """Copy whose tensors do not require grad, so no graph is recorded."""
        out = ParamStore(self.rng_seed, self.dtype)
        for name, t in self.records.items():
            out.records[name] = Tensor(t.data, requires_grad=False, name=name)
        return out

    def arrays(self):
        return OrderedDict((k, t.data) for k, t in self.records.items())

    def load_arrays(self, arrays):
        missing = set(self.records) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, t in self.records.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ConfigError(f"parameter {name}: checkpoint shape {arr.shape} != {t.shape}")
            t.data = arr.astype(self.dtype)


def trunc_normal(rng, shape, std, bound=2.0):
    """Normal draws with |z| <= bound * std, resampling rejected entries."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, p in params.items():
        if p.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient; run backward first")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in params.items():
        g = p.grad.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return params, state


def global_grad_norm(params):
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                             for p in params.records.values() if p.grad is not None)))


def clip_grad_norm(params, max_norm):
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params.records.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm
