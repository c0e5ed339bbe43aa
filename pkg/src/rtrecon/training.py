"""Training, evaluation, ablations and unroll-length sweeps."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kspace, metrics
from .autodiff import AdamState, adam_step, clip_grad_norm, l1_loss
from .dataset import Dataset, load_dataset
from .errors import ConfigError, DomainError, ShapeError
from .network import ModelConfig, init_params, model_forward, reconstruct
from .records import load_records, save_records

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "dataset"
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 200
    epochs: int = 0  # > 0 switches to the full schedule: epochs * ceil(n / batch_size) steps
    batch_size: int = 4
    lr: float = 2e-4
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint: str = ""
    log_path: str = ""

    def __post_init__(self):
        if self.steps < 1 and self.epochs < 1:
            raise ConfigError("need steps >= 1 or epochs >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr < 0 or self.grad_clip < 0:
            raise ConfigError("lr and grad_clip must be non-negative")

    def total_steps(self, n_samples):
        if self.epochs > 0:
            return self.epochs * math.ceil(n_samples / self.batch_size)
        return self.steps


@dataclass
class TrainResult:
    params: object
    adam: AdamState
    log: list  # (step, loss, seconds)
    seconds: float


def _batches(n, batch_size, rng):
    """Endless stream of index batches; a fresh permutation every epoch."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def _check_geometry(data, model):
    h, w = data.gt.shape[1:3]
    if (h, w) != (model.height, model.width):
        raise ShapeError(f"dataset images are {h}x{w}, model expects {model.height}x{model.width}")


def train(cfg, data=None, params=None):
    """Minimize the mean L1 error between the final iterate and ground truth.

    Every minibatch starts its unroll from zero recurrent state. Gradients are
    clipped to global norm ``cfg.grad_clip`` before each Adam step.
    """
    if data is None:
        data = load_dataset(cfg.dataset)
    model = cfg.model
    _check_geometry(data, model)
    if params is None:
        params = init_params(model, cfg.seed)
    dtype = params.dtype
    gt = data.gt.astype(dtype)
    ksp = data.kspace.astype(dtype)
    adam = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    batches = _batches(len(data), cfg.batch_size, rng)
    rows = []
    t0 = time.perf_counter()
    for step in range(1, cfg.total_steps(len(data)) + 1):
        idx = next(batches)
        try:
            final, _ = model_forward(ksp[idx], data.masks[idx], params, model)
            loss = l1_loss(final, gt[idx])
        except DomainError as exc:
            raise DomainError(f"train: non-finite values at step {step}: {exc}") from exc
        value = float(loss.data)
        if not math.isfinite(value):
            raise DomainError(f"train: non-finite loss at step {step}")
        params.zero_grad()
        loss.backward()
        clip_grad_norm(params, cfg.grad_clip)
        adam_step(params, adam)
        rows.append((step, value, time.perf_counter() - t0))
        if step == 1 or step % 25 == 0:
            log.info("step %d loss %.6f (%.1fs)", step, value, rows[-1][2])
    result = TrainResult(params, adam, rows, time.perf_counter() - t0)
    if cfg.log_path:
        write_loss_log(cfg.log_path, rows)
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, params, adam)
    return result


def write_loss_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "seconds"])
        for step, loss, secs in rows:
            w.writerow([step, repr(loss), f"{secs:.3f}"])


def read_loss_log(path):
    with open(path, encoding="utf-8") as fh:
        return [(int(r["step"]), float(r["loss"]), float(r["seconds"])) for r in csv.DictReader(fh)]


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, adam=None):
    records = dict(params.arrays())
    if adam is not None:
        for name in params.names():
            if name in adam.m:
                records[f"adam.m.{name}"] = np.asarray(adam.m[name], dtype=np.float64)
                records[f"adam.v.{name}"] = np.asarray(adam.v[name], dtype=np.float64)
        records["adam.step"] = np.array([adam.step], dtype=np.float64)
        records["adam.hyper"] = np.array([adam.lr, adam.beta1, adam.beta2, adam.eps])
    save_records(path, records)


def load_checkpoint(path, model, seed=0):
    """Rebuild a parameter store for ``model`` and fill it from ``path``."""
    records = load_records(path)
    params = init_params(model, seed)
    extra = sorted(n for n in records if not n.startswith("adam.") and n not in params.records)
    if extra:
        raise ConfigError(f"checkpoint holds parameters the model lacks: {extra[:5]}")
    params.load_arrays(records)
    adam = AdamState()
    if "adam.step" in records:
        adam.step = int(records["adam.step"][0])
        adam.lr, adam.beta1, adam.beta2, adam.eps = (float(v) for v in records["adam.hyper"])
        for name in params.names():
            if f"adam.m.{name}" in records:
                adam.m[name] = records[f"adam.m.{name}"]
                adam.v[name] = records[f"adam.v.{name}"]
    return params, adam


# ----------------------------------------------------------------------------
# evaluation


SAMPLE_FIELDS = ("sample_id", "psnr", "ssim", "psnr_low", "psnr_high",
                 "zf_psnr", "zf_ssim", "zf_psnr_low", "zf_psnr_high")


@dataclass
class MetricsReport:
    rows: list  # dicts keyed by SAMPLE_FIELDS
    config: dict
    seconds: float

    def column(self, key):
        return [r[key] for r in self.rows]

    def mean(self, key):
        return metrics.finite_mean(self.column(key))

    def std(self, key):
        vals = [v for v in self.column(key) if v != metrics.IDENTICAL]
        return float(np.std(vals)) if vals else 0.0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_FIELDS)
        for r in self.rows:
            w.writerow([r["sample_id"]] + [_fmt(r[k]) for k in SAMPLE_FIELDS[1:]])
        return buf.getvalue()

    def summary(self):
        lines = [f"samples = {len(self.rows)}"]
        for key in SAMPLE_FIELDS[1:]:
            lines.append(f"{key} = {_fmt(self.mean(key))} +/- {self.std(key):.4f}")
        lines.append(f"psnr_gain_over_zero_filled = {_fmt(self.mean('psnr') - self.mean('zf_psnr'))}")
        for k, v in sorted(self.config.items()):
            lines.append(f"config.{k} = {v}")
        lines.append(f"wall_seconds = {self.seconds:.3f}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return "identical" if v == metrics.IDENTICAL else f"{v:.6f}"
    return str(v)


def score_images(recon, gt, low_fraction=1 / 3):
    """PSNR / SSIM / band PSNRs of one reconstruction against its ground truth."""
    rm, gm = metrics.magnitude(recon), metrics.magnitude(gt)
    peak = float(gm.max())
    lo, hi = metrics.band_psnr(recon, gt, low_fraction)
    return {"psnr": metrics.psnr(rm, gm, peak), "ssim": metrics.ssim(rm, gm, peak),
            "psnr_low": lo, "psnr_high": hi}


def reconstruct_dataset(params, model, data, unroll=None, batch_size=4):
    out = []
    ksp = data.kspace.astype(params.dtype)
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        out.append(reconstruct(ksp[sl], data.masks[sl], params, model, unroll))
    return np.concatenate(out).astype(np.float64)


def evaluate(params, model, data, unroll=None, recons=None, low_fraction=1 / 3):
    """Score reconstructions (computed unless ``recons`` is given) and the zero-filled baseline."""
    t0 = time.perf_counter()
    if recons is None:
        recons = reconstruct_dataset(params, model, data, unroll)
    rows = []
    for i in range(len(data)):
        zf = kspace.zero_fill(data.kspace[i], data.masks[i])
        row = {"sample_id": data.manifest.samples[i].sample_id}
        row.update(score_images(recons[i], data.gt[i], low_fraction))
        row.update({f"zf_{k}": v for k, v in score_images(zf, data.gt[i], low_fraction).items()})
        rows.append(row)
    rows.sort(key=lambda r: r["sample_id"])
    config = dict(model.to_dict())
    config["eval_unroll"] = unroll if unroll is not None else model.unroll
    return MetricsReport(rows, config, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# ablations and sweeps


TOGGLES = ("ru2", "ru3", "rm", "rptl")

# cumulative rows of the module ablation table, from RU1 alone to the full model
ABLATION_VARIANTS = (
    {"ru2": False, "ru3": False, "rm": False, "rptl": False},
    {"ru2": True, "ru3": False, "rm": False, "rptl": False},
    {"ru2": True, "ru3": True, "rm": False, "rptl": False},
    {"ru2": True, "ru3": True, "rm": True, "rptl": False},
    {"ru2": True, "ru3": True, "rm": True, "rptl": True},
)


def variant_config(model, ru2=True, ru3=True, rm=True, rptl=True):
    """Model with optional units/refine module; ``rptl=False`` swaps in plain MHSA."""
    units = (1,) + ((2,) if ru2 else ()) + ((3,) if ru3 else ())
    return replace(model, units=units, refine=rm, attention="rsa" if rptl else "mhsa")


def variant_label(toggles):
    return "RU1" + "".join(f"+{k.upper()}" for k in TOGGLES if toggles.get(k))


def train_and_score(cfg, data, cache=None):
    """Train ``cfg`` and evaluate on ``data``; memoized in ``cache`` when given."""
    key = (cfg.model, cfg.steps, cfg.epochs, cfg.batch_size, cfg.lr, cfg.grad_clip, cfg.seed,
           data.manifest.master_seed, len(data))
    if cache is not None and key in cache:
        return cache[key]
    t0 = time.perf_counter()
    result = train(replace(cfg, checkpoint="", log_path=""), data)
    report = evaluate(result.params, cfg.model, data)
    out = {"psnr": report.mean("psnr"), "ssim": report.mean("ssim"),
           "zf_psnr": report.mean("zf_psnr"), "params": result.params.count(),
           "seconds": time.perf_counter() - t0, "train_seconds": result.seconds,
           "report": report, "result": result}
    if cache is not None:
        cache[key] = out
    return out


@dataclass
class AblationReport:
    rows: list  # dicts: variant, toggles, seed, params, psnr, ssim

    def median(self, label, key="psnr"):
        return float(np.median([r[key] for r in self.rows if r["variant"] == label]))

    def labels(self):
        seen = []
        for r in self.rows:
            if r["variant"] not in seen:
                seen.append(r["variant"])
        return seen

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "RU1", "RU2", "RU3", "RM", "RPTL", "seed", "params", "ssim", "psnr"])
        for r in self.rows:
            t = r["toggles"]
            w.writerow([r["variant"], 1] + [int(t[k]) for k in TOGGLES]
                       + [r["seed"], r["params"], f"{r['ssim']:.6f}", f"{r['psnr']:.6f}"])
        return buf.getvalue()

    def table(self):
        """Median over seeds, one line per variant, in the module-ablation layout."""
        lines = ["RU1 RU2 RU3 RM  RPTL | SSIM    PSNR"]
        for label in self.labels():
            t = next(r["toggles"] for r in self.rows if r["variant"] == label)
            marks = " ".join(f"{'x' if t[k] else '-':<3}" for k in TOGGLES)
            lines.append(f"x   {marks} | {self.median(label, 'ssim'):.4f}  {self.median(label):.2f}")
        return "\n".join(lines) + "\n"


def ablation_run(base, data, variants=ABLATION_VARIANTS, seeds=(0, 1, 2), cache=None):
    """Retrain every variant from scratch under the same budget for every seed."""
    rows = []
    for toggles in variants:
        unknown = set(toggles) - set(TOGGLES)
        if unknown:
            raise ConfigError(f"unknown ablation toggles {sorted(unknown)}")
        full = {k: bool(toggles.get(k, True)) for k in TOGGLES}
        model = variant_config(base.model, **full)
        for seed in seeds:
            out = train_and_score(replace(base, model=model, seed=seed), data, cache)
            rows.append({"variant": variant_label(full), "toggles": full, "seed": seed,
                         "params": out["params"], "psnr": out["psnr"], "ssim": out["ssim"]})
            log.info("ablation %s seed %d: %.3f dB", variant_label(full), seed, out["psnr"])
    return AblationReport(rows)


def unroll_sweep(base, data, unrolls, cache=None):
    """Rows ``(T, psnr, ssim, seconds)``: a fresh model per unroll length."""
    rows = []
    for T in unrolls:
        cfg = replace(base, model=replace(base.model, unroll=int(T)))
        out = train_and_score(cfg, data, cache)
        rows.append((int(T), out["psnr"], out["ssim"], out["train_seconds"]))
        log.info("unroll T=%d: %.3f dB", T, out["psnr"])
    return rows


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "psnr", "ssim", "seconds"])
    for T, p, s, secs in rows:
        w.writerow([T, f"{p:.6f}", f"{s:.6f}", f"{secs:.3f}"])
    return buf.getvalue()


def load_training_data(path):
    return path if isinstance(path, Dataset) else load_dataset(Path(path))
