"""Convolution, normalization, softmax and loss ops on NHWC tensors."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UsageError
from .tensor import _make, as_tensor


def sum_last(a):
    """Sum over the trailing axis, keepdims; BLAS is far faster than
    ``ufunc.reduce`` when that axis is short."""
    return a @ np.ones((a.shape[-1], 1), dtype=a.dtype)


def sum_lead(a):
    """Sum over every axis but the last."""
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], dtype=a.dtype) @ a2


def _row_cols(xp, k, stride, wo):
    """Gather the k horizontal taps: ``(B, Hp, wo, k*C)`` from a padded array."""
    b, hp, _, c = xp.shape
    cols = np.empty((b, hp, wo, k, c), dtype=xp.dtype)
    for j in range(k):
        cols[:, :, :, j, :] = xp[:, :, j:j + stride * wo:stride, :]
    return cols.reshape(b, hp, wo, k * c)


def _row_cols_adjoint(gcols, padded_shape, k, stride, wo):
    b, hp, _, c = padded_shape
    gcols = gcols.reshape(b, hp, wo, k, c)
    out = np.zeros(padded_shape, dtype=gcols.dtype)
    for j in range(k):
        out[:, :, j:j + stride * wo:stride, :] += gcols[:, :, :, j, :]
    return out


def _im2col(xp, k, stride, ho, wo):
    """Patches of a padded NHWC array as ``(B, ho, wo, k*k*C)``, (i, j, c) order."""
    b, _, _, c = xp.shape
    cols = np.empty((b, ho, wo, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(b, ho, wo, k * k * c)


def _col2im(cols, padded_shape, k, stride, ho, wo):
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the grid."""
    b, _, _, c = padded_shape
    cols = cols.reshape(b, ho, wo, k, k, c)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j, :]
    return out


def _conv_geometry(weight_shape, cin, stride, padding):
    k, k2, wcin, _ = weight_shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square and odd-sized, got {k}x{k2}")
    if wcin != cin:
        raise ShapeError(f"input has {cin} channels, weight expects {wcin}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if padding == "same":
        return k, (k - 1) // 2
    if padding == "valid":
        return k, 0
    raise UsageError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, weight, bias=None, stride=1, padding="same", transposed=False):
    """2D cross-correlation on ``(B, H, W, Cin)`` with weight ``(k, k, Cin, Cout)``.

    With ``transposed=True`` the op is the adjoint (gradient) of a strided
    convolution with the same weight layout; stride 2 with same padding
    doubles both spatial extents.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-axis input and weight, got {x.shape}, {weight.shape}")
    k, pad = _conv_geometry(weight.shape, x.shape[3], stride, padding)
    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    if transposed:
        data, back = _conv_transpose(x.data, weight.data, stride, k, pad)
    else:
        data, back = _conv_forward(x.data, weight.data, stride, k, pad)
    if bias is not None:
        data += parents[2].data

    def backward(g):
        gx, gw = back(g, x.requires_grad)
        if bias is None:
            return gx, gw
        return gx, gw, sum_lead(g)

    return _make(data, parents, backward)


def _conv_forward(x, w, stride, k, pad):
    # Only horizontal taps are gathered; each kernel row i then reads a
    # contiguous band of padded rows, so stride-1 row slices need no copy.
    b, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[1:3]} too small for kernel {k}")
    rc = _row_cols(xp, k, stride, wo)
    wrow = w.reshape(k, k * cin, cout)
    n = b * ho * wo

    def band(i):
        return rc[:, i:i + stride * ho:stride].reshape(n, k * cin)

    out = band(0) @ wrow[0]
    for i in range(1, k):
        out += band(i) @ wrow[i]

    def back(g, need_x):
        g2 = g.reshape(n, cout)
        gw = np.stack([band(i).T @ g2 for i in range(k)]).reshape(w.shape)
        gx = None
        if need_x:
            grc = np.zeros(rc.shape, dtype=g.dtype)
            for i in range(k):
                grc[:, i:i + stride * ho:stride] += (g2 @ wrow[i].T).reshape(b, ho, wo, k * cin)
            gxp = _row_cols_adjoint(grc, xp.shape, k, stride, wo)
            gx = gxp[:, pad:pad + h, pad:pad + wd, :] if pad else gxp
        return gx, gw

    return out.reshape(b, ho, wo, cout), back


def _conv_transpose(x, w, stride, k, pad):
    b, h, wd, cin = x.shape
    cout = w.shape[3]
    extra = stride - 1 if pad else 0
    hf = (h - 1) * stride + k + extra
    wf = (wd - 1) * stride + k + extra
    ho, wo = hf - 2 * pad, wf - 2 * pad
    wmat = w.transpose(2, 0, 1, 3).reshape(cin, k * k * cout)
    x2 = x.reshape(-1, cin)
    full = _col2im(x2 @ wmat, (b, hf, wf, cout), k, stride, h, wd)
    out = np.ascontiguousarray(full[:, pad:pad + ho, pad:pad + wo, :])

    def back(g, need_x):
        gf = np.zeros((b, hf, wf, cout), dtype=g.dtype)
        gf[:, pad:pad + ho, pad:pad + wo, :] = g
        gcols = _im2col(gf, k, stride, h, wd).reshape(-1, k * k * cout)
        gw = (x2.T @ gcols).reshape(cin, k, k, cout).transpose(1, 2, 0, 3)
        gx = (gcols @ wmat.T).reshape(x.shape) if need_x else None
        return gx, np.ascontiguousarray(gw)

    return out, back


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the trailing (channel) axis, population variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data
    inv_n = d.dtype.type(1.0 / d.shape[-1])
    xc = d - sum_last(d) * inv_n
    var = sum_last(xc * xc) * inv_n
    rstd = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        gg = sum_lead(g * xhat)
        gb = sum_lead(g)
        gx = None
        if x.requires_grad:
            gxh = g * gd
            gx = rstd * (gxh - sum_last(gxh) * inv_n - xhat * (sum_last(gxh * xhat) * inv_n))
        return gx, gg, gb

    return _make(out, (x, gamma, beta), back)


_TINY = 1e-30


def softmax(x, axis=-1):
    """Max-stabilized softmax.

    Along the last axis of a stacked (..., n, n) input the shift is the max
    of each trailing matrix (one cheap long reduction) instead of each row;
    rows whose sum underflows under that shift are redone with their own max.
    """
    x = as_tensor(x)
    d = x.data
    axis = axis % d.ndim
    if axis == d.ndim - 1 and d.ndim >= 2:
        lead = d.shape[:-2]
        m = d.reshape(lead + (-1,)).max(axis=-1).reshape(lead + (1, 1))
        e = np.exp(d - m)
        tot = sum_last(e)
        if tot.min() < _TINY:
            e = np.exp(d - d.max(axis=-1, keepdims=True))
            tot = sum_last(e)
        s = e / tot

        def back(g):
            return (s * (g - sum_last(g * s)),)
    else:
        e = np.exp(d - d.max(axis=axis, keepdims=True))
        s = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), back)


def l1_loss(pred, target):
    """Mean absolute error; the subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        sg = np.sign(diff) * (g / n)
        return sg, -sg

    return _make(np.asarray(np.abs(diff).mean(), dtype=diff.dtype), (pred, target), back)
