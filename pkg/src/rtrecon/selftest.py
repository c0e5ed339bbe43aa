"""Fast invariant checks runnable from an installed package (``rtrecon selftest``)."""
from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from . import attention, kspace, metrics, records
from .autodiff import ParamStore, Tensor, conv2d, finite_diff_gradcheck, layer_norm, mean_all, mul, softmax
from .network import ModelConfig, init_params, model_forward


def _naive_dft(z):
    """Centered orthonormal 2D DFT by explicit double sum."""
    h, w = z.shape
    u = np.arange(h) - h // 2
    v = np.arange(w) - w // 2
    fu = np.exp(-2j * np.pi * np.outer(u, u) / h)
    fv = np.exp(-2j * np.pi * np.outer(v, v) / w)
    return fu @ z @ fv.T / math.sqrt(h * w)


def check_fft():
    rng = np.random.default_rng(1)
    for n in (4, 8):
        img = rng.standard_normal((n, n, 2))
        got = kspace.to_complex(kspace.fft2c(img))
        assert np.abs(got - _naive_dft(kspace.to_complex(img))).max() < 1e-10
        assert np.abs(kspace.ifft2c(kspace.fft2c(img)) - img).max() < 1e-12


def check_dc():
    rng = np.random.default_rng(2)
    img = rng.standard_normal((32, 32, 2))
    mask = kspace.make_cartesian_mask(32, 4, 0.08, seed=3)
    x = kspace.forward_model(rng.standard_normal((32, 32, 2)), mask)
    out = kspace.dc_project(img, x, mask)
    k = kspace.fft2c(out)
    assert np.abs(k[:, mask.columns] - x[:, mask.columns]).max() < 1e-10
    assert np.abs(kspace.dc_project(out, x, mask) - out).max() < 1e-10


def check_attention_degenerate():
    rng = np.random.default_rng(3)
    cfg = attention.RSAConfig(embed_dim=8, window_size=4, scales=(1, 1), lambda_init=1.0)
    store = ParamStore(dtype=np.float64)
    attention.init_rsa_params(store, "a", cfg, rng)
    feat = Tensor(rng.standard_normal((8, 8, 8)))
    grid = attention.window_partition(feat, 4)
    out, _ = attention.rsa(grid, None, store, "a", cfg)
    f = grid.windows.data
    q, k, v = (f @ store[f"a.{n}.weight"].data for n in "qkv")
    d = cfg.head_dim
    heads = []
    for hd in range(cfg.num_heads):
        sl = slice(hd * d, (hd + 1) * d)
        logits = q[..., sl] @ np.swapaxes(k[..., sl], -1, -2) / math.sqrt(d)
        p = np.exp(logits - logits.max(-1, keepdims=True))
        heads.append((p / p.sum(-1, keepdims=True)) @ v[..., sl])
    ref = np.concatenate(heads, -1) @ store["a.proj.weight"].data + store["a.proj.bias"].data
    assert np.abs(out.windows.data - ref).max() < 1e-10


def check_windows():
    feat = np.random.default_rng(4).standard_normal((2, 8, 8, 3))
    for shift in (0, 2):
        grid = attention.window_partition(Tensor(feat), 4, shift)
        assert np.array_equal(attention.window_merge(grid).data, feat)


def check_records():
    rng = np.random.default_rng(5)
    recs = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(7).astype(np.float32)}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.rfk"
        records.save_records(path, recs)
        back = records.load_records(path)
    assert list(back) == list(recs)
    for name in recs:
        assert back[name].dtype == recs[name].dtype and np.array_equal(back[name], recs[name])


def check_gradients():
    rng = np.random.default_rng(6)
    w = rng.standard_normal((3, 3, 2, 3))
    x = rng.standard_normal((1, 6, 6, 2))
    err = finite_diff_gradcheck(lambda t: mean_all(mul(conv2d(t[0], t[1], stride=2), conv2d(t[0], t[1], stride=2))),
                                [x, w])
    assert err < 1e-5, err
    g = rng.standard_normal(5)
    err = finite_diff_gradcheck(lambda t: mean_all(mul(softmax(layer_norm(t[0], t[1], t[2])), t[0])),
                                [rng.standard_normal((3, 5)), g, rng.standard_normal(5)])
    assert err < 1e-5, err


def check_model_gradient():
    cfg = ModelConfig(height=16, width=16, channels=4, unroll=2, window_size=2,
                      ru1_scales=(1,), ru2_scales=(1,), ru3_scales=(1,))
    params = init_params(cfg, 0, np.float64)
    rng = np.random.default_rng(7)
    mask = kspace.make_cartesian_mask(16, 4, 0.125, seed=0)
    x = kspace.forward_model(rng.standard_normal((16, 16, 2)), mask)[None]
    target = rng.standard_normal((1, 16, 16, 2))
    names = params.names()
    tensors = [params[n] for n in names]

    def op(ts):
        for n, t in zip(names, ts):
            params.records[n] = t
        y, _ = model_forward(x, mask, params, cfg)
        d = y - Tensor(target)
        return mean_all(mul(d, d))

    picks = rng.choice(len(names), 5)
    coords = [(int(i), int(rng.integers(tensors[i].size))) for i in picks]
    assert finite_diff_gradcheck(op, tensors, coords=coords) < 1e-4


def check_metrics():
    rng = np.random.default_rng(8)
    a = rng.random((16, 16))
    assert metrics.psnr(a, a, 1.0) == metrics.IDENTICAL
    assert abs(metrics.ssim(a, a, 1.0) - 1.0) < 1e-12
    r, g = rng.standard_normal((2, 16, 16, 2))
    lo, hi = metrics.band_mse(r, g)
    assert abs(lo + hi - metrics.complex_mse(r, g)) < 1e-10


CHECKS = [
    ("fft matches naive DFT", check_fft),
    ("data consistency", check_dc),
    ("attention degenerates to softmax attention", check_attention_degenerate),
    ("window partition round trip", check_windows),
    ("record round trip", check_records),
    ("op gradients", check_gradients),
    ("model gradient", check_model_gradient),
    ("metrics and band split", check_metrics),
]


def run(out=print):
    """Run every check, print one line each; True when all pass."""
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except Exception as exc:  # report and keep going
            status = f"FAIL ({type(exc).__name__}: {exc})"
            ok = False
        out(f"{status[:4]}  {name}  [{time.perf_counter() - t0:.2f}s]" + (status[4:] if status != "PASS" else ""))
    out("selftest " + ("passed" if ok else "FAILED"))
    return ok
