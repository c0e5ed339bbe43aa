"""Reverse-mode tape over numpy arrays.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the output records its parents and a closure mapping the output
gradient to parent gradients. :func:`backward` walks that graph in reverse
topological order and then releases it.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError, ShapeError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_freed", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._freed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _make(data, parents, backward_fn):
    """Wrap an op result and attach graph edges when any parent needs grad."""
    # a single reduction is cheaper than an elementwise isfinite pass
    if not np.isfinite(data.sum()):
        raise DomainError("operation produced non-finite values")
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The graph is freed afterwards; calling again on the same loss raises.
    """
    if loss._freed:
        raise UsageError("backward called on a graph that was already freed")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")

    if loss.is_leaf:
        _accumulate(loss, np.ones_like(loss.data))
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen and not p.is_leaf:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        g = node.grad
        fn = node._backward
        parents = node._parents
        node.grad = None
        node._parents = ()
        node._backward = None
        node._freed = True
        if g is None:
            continue
        grads = fn(g)
        for p, pg in zip(parents, grads):
            if pg is not None and p.requires_grad:
                _accumulate(p, pg)


# ----------------------------------------------------------------------------
# elementwise


def _pair(a, b):
    """Promote a bare scalar/array operand to the dtype of the tensor one."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), back)


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def scale(x, alpha):
    x = as_tensor(x)
    alpha = float(alpha)
    return _make(x.data * x.data.dtype.type(alpha), (x,), lambda g: (g * alpha,))


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * pos,))


GELU_C = 0.7978845608  # sqrt(2 / pi)


def gelu(x):
    """GELU with the tanh approximation."""
    x = as_tensor(x)
    d = x.data
    c = d.dtype.type(GELU_C)
    k = d.dtype.type(0.044715)
    th = np.tanh(c * (d + k * d * d * d))
    out = 0.5 * d * (1 + th)

    def back(g):
        dth = (1 - th * th) * c * (1 + 3 * k * d * d)
        return (g * (0.5 * (1 + th) + 0.5 * d * dth),)

    return _make(out, (x,), back)


def elementwise(kind, *args):
    """Dispatch by name: add, mul, relu, gelu, scale."""
    ops = {"add": add, "mul": mul, "relu": relu, "gelu": gelu, "scale": scale, "sub": sub}
    if kind not in ops:
        raise UsageError(f"unknown elementwise op {kind!r}")
    return ops[kind](*args)


# ----------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _make(data, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def roll(x, shifts, axes):
    x = as_tensor(x)
    back_shifts = tuple(-s for s in shifts)
    return _make(np.roll(x.data, shifts, axes), (x,),
                 lambda g: (np.roll(g, back_shifts, axes),))


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = list(xs[0].shape)
    ax = axis % len(ref)
    for x in xs[1:]:
        s = list(x.shape)
        if len(s) != len(ref) or s[:ax] + s[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return _make(np.concatenate([x.data for x in xs], axis=ax), tuple(xs), back)


def concat_channels(xs):
    """Concatenate along the trailing channel axis."""
    return concat(xs, axis=-1)


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x):
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(shape, g / n, dtype=x.dtype),))


# ----------------------------------------------------------------------------
# products


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul leading axes differ: {a.shape} vs {b.shape}") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), back)


matmul_batched = matmul


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the trailing axis of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    w = weight.data
    out = x2 @ w
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents = parents + (bias,)

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.T).reshape(lead + (w.shape[0],)) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, np.ones(g2.shape[0], dtype=g2.dtype) @ g2

    return _make(out.reshape(lead + (w.shape[1],)), parents, back)
