"""Central finite differences against the tape, in float64."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _rel_err(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_gradcheck(op, inputs, h=1e-6, coords=None, floor=1e-8, skip=None):
    """Worst relative error between autodiff and central differences.

    ``op`` maps the list of input tensors to a scalar tensor. ``inputs`` are
    float64 arrays (or tensors) that are perturbed in place. ``coords`` limits
    the sweep to ``[(input_index, flat_index), ...]``; ``skip(i, j)`` returning
    True drops a coordinate, e.g. a non-differentiable tie point.
    """
    tensors = [x if isinstance(x, Tensor) else Tensor(np.array(x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    loss = op(tensors)
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    if coords is None:
        coords = [(i, j) for i, t in enumerate(tensors) for j in range(t.size)]
    worst = 0.0
    for i, j in coords:
        if skip is not None and skip(i, j):
            continue
        flat = tensors[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = float(op(tensors).data)
        flat[j] = orig - h
        fm = float(op(tensors).data)
        flat[j] = orig
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, _rel_err(analytic[i].reshape(-1)[j], numeric, floor))
    return worst
