"""Figures rendered next to the CSV reports.

Everything draws onto a standalone :class:`~matplotlib.figure.Figure` with the
Agg canvas, so no pyplot state or display is involved.
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

DPI = 100


def _figure(width=5.0, height=3.5, ncols=1):
    fig = Figure(figsize=(width, height), dpi=DPI)
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, axes


def _save(fig, path):
    fig.tight_layout()
    # no Software tag, so the bytes do not depend on the matplotlib version string
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def loss_curve(rows, path):
    """``rows`` are ``(step, loss, seconds)`` triples from a training log."""
    fig, (ax,) = _figure()
    steps = [r[0] for r in rows]
    ax.plot(steps, [r[1] for r in rows], lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def error_map(recon_mag, gt_mag, path, zf_mag=None):
    """Ground truth, reconstruction and |recon - gt| side by side (zero-filled too if given)."""
    panels = [("ground truth", gt_mag, "gray")]
    if zf_mag is not None:
        panels.append(("zero-filled", zf_mag, "gray"))
    panels += [("reconstruction", recon_mag, "gray"), ("|error|", np.abs(recon_mag - gt_mag), "magma")]
    fig, axes = _figure(3.0 * len(panels), 3.2, len(panels))
    vmax = float(gt_mag.max())
    for ax, (title, img, cmap) in zip(axes, panels):
        kw = {"vmin": 0.0, "vmax": vmax} if cmap == "gray" else {}
        im = ax.imshow(img, cmap=cmap, **kw)
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        if cmap != "gray":
            fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def band_bars(series, path):
    """Grouped low/high band PSNR bars; ``series`` maps a label to ``(low_db, high_db)``."""
    fig, (ax,) = _figure(4.5, 3.5)
    x = np.arange(2)
    width = 0.8 / len(series)
    for j, (label, values) in enumerate(series.items()):
        ax.bar(x + (j - (len(series) - 1) / 2) * width, values, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(["low band", "high band"])
    ax.set_ylabel("PSNR (dB)")
    ax.legend(frameon=False)
    return _save(fig, path)


def unroll_curve(rows, path):
    """PSNR against unroll length from ``(T, psnr, ssim, seconds)`` rows."""
    fig, (ax,) = _figure(4.5, 3.5)
    ax.plot([r[0] for r in rows], [r[1] for r in rows], "o-")
    ax.set_xlabel("unroll length T")
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks([r[0] for r in rows])
    ax.grid(alpha=0.3)
    return _save(fig, path)


def ablation_bars(report, path):
    """Median PSNR per variant with the per-seed values overlaid."""
    labels = report.labels()
    fig, (ax,) = _figure(1.2 * len(labels) + 2, 3.8)
    x = np.arange(len(labels))
    ax.bar(x, [report.median(lbl) for lbl in labels], 0.6, color="C0", alpha=0.7)
    for i, lbl in enumerate(labels):
        vals = [r["psnr"] for r in report.rows if r["variant"] == lbl]
        ax.plot([i] * len(vals), vals, "k.", ms=4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    lo = min(r["psnr"] for r in report.rows)
    ax.set_ylim(lo - 1.0, None)
    return _save(fig, path)
