"""Command-line entry point: ``rtrecon <command> [options]``.

Exit status is 0 on success, 1 when a library operation fails and 2 for
usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import kspace, metrics, plotting, selftest, training
from .dataset import Dataset, build_dataset, load_dataset
from .errors import ConfigError, ReconError
from .records import save_record

log = logging.getLogger("rtrecon")

COMMANDS = ("gen-data", "train", "recon", "eval", "ablate", "sweep-unroll", "kspace-analysis", "selftest")


class UsageFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageFailure(f"{self.prog}: error: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="master seed for data, initialization and shuffling")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")

    parser = _Parser(prog="rtrecon", description="Recurrent transformer MRI reconstruction on phantoms.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="simulate a phantom dataset into --out")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--h", type=int, help="image height")
    p.add_argument("--w", type=int, help="image width")
    p.add_argument("--af", type=float, help="acceleration factor")

    def with_data(p, checkpoint=False):
        p.add_argument("--data", help="dataset directory (config key: dataset)")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file (config key: checkpoint)")
        return p

    with_data(sub.add_parser("train", parents=[common], help="train and write checkpoint + loss log"))
    p = with_data(sub.add_parser("recon", parents=[common], help="reconstruct one sample, write error maps"), True)
    p.add_argument("--sample", type=int, help="sample index (config key: sample)")
    with_data(sub.add_parser("eval", parents=[common], help="metrics and band report for a checkpoint"), True)
    with_data(sub.add_parser("ablate", parents=[common], help="module ablation over seeds"))
    with_data(sub.add_parser("sweep-unroll", parents=[common], help="train one model per unroll length"))
    with_data(sub.add_parser("kspace-analysis", parents=[common],
                             help="low/high band PSNR of a checkpoint or of zero-filling"), True)
    sub.add_parser("selftest", parents=[common], help="run the built-in invariant checks")
    return parser


def _resolve(args):
    extra = {"seed": args.seed, "dataset": getattr(args, "data", None),
             "checkpoint": getattr(args, "checkpoint", None), "sample": getattr(args, "sample", None)}
    if args.command == "gen-data":
        extra.update({"n": args.n, "height": args.h, "width": args.w, "acceleration": args.af})
    cfg = cfgmod.resolve(args.config, args.overrides, extra)
    if args.command not in ("gen-data", "selftest"):
        cfgmod.model_config(cfg)  # validate geometry before any work
        cfgmod.train_config(cfg)
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _checkpoint_path(cfg, out):
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.rfk"


def _load_model(cfg):
    model = cfgmod.model_config(cfg)
    if not cfg["checkpoint"]:
        raise ConfigError("a checkpoint is required (--checkpoint or checkpoint = ...)")
    params, _ = training.load_checkpoint(cfg["checkpoint"], model, cfg["seed"])
    return model, params


def _unroll(cfg):
    return cfg["eval_unroll"] or None


def cmd_gen_data(cfg, out):
    manifest = build_dataset(cfg["n"], cfgmod.phantom_spec(cfg), cfg["acceleration"], cfg["noise_sigma"],
                             cfg["seed"], out, cfgmod.center_fraction(cfg))
    print(f"wrote {manifest.count} samples ({manifest.height}x{manifest.width}, AF={manifest.acceleration:g}) to {out}")


def cmd_train(cfg, out):
    data = load_dataset(cfg["dataset"])
    ckpt = _checkpoint_path(cfg, out)
    tcfg = cfgmod.train_config(cfg, log_path=str(out / "loss.csv"))
    result = training.train(replace(tcfg, checkpoint=str(ckpt)), data)
    plotting.loss_curve(result.log, out / "loss.png")
    print(f"trained {len(result.log)} steps in {result.seconds:.1f}s; final loss {result.log[-1][1]:.6f}")
    print(f"checkpoint: {ckpt}")


def cmd_recon(cfg, out):
    data = load_dataset(cfg["dataset"])
    model, params = _load_model(cfg)
    i = cfg["sample"]
    if not 0 <= i < len(data):
        raise ConfigError(f"sample index {i} outside dataset of {len(data)}")
    recon = training.reconstruct_dataset(params, model, _subset(data, i), _unroll(cfg))[0]
    rmag, gmag = metrics.magnitude(recon), metrics.magnitude(data.gt[i])
    zmag = metrics.magnitude(kspace.zero_fill(data.kspace[i], data.masks[i]))
    err = np.abs(rmag - gmag)
    save_record(out / "recon_magnitude.rfk", "recon_magnitude", rmag)
    save_record(out / "error_map.rfk", "error_map", err)
    zerr = np.abs(zmag - gmag)
    rows = [[name] + [f"{v:.8g}" for v in (e.mean(), e.std(), np.sqrt(np.mean(e * e)),
                                           *np.percentile(e, [50, 95, 99]), e.max())]
            for name, e in (("model", err), ("zero_filled", zerr))]
    _write_csv(out / "error_stats.csv", ["image", "mean", "std", "rmse", "p50", "p95", "p99", "max"], rows)
    plotting.error_map(rmag, gmag, out / "error_map.png", zf_mag=zmag)
    peak = float(gmag.max())
    print(f"sample {i}: PSNR {metrics.format_psnr(metrics.psnr(rmag, gmag, peak))} dB "
          f"(zero-filled {metrics.format_psnr(metrics.psnr(zmag, gmag, peak))} dB)")


def _subset(data, i):
    return Dataset(data.manifest, data.gt[i:i + 1], data.kspace[i:i + 1], data.masks[i:i + 1])


def _band_rows(report):
    return [[r["sample_id"]] + [metrics.format_psnr(r[k]) for k in ("psnr_low", "psnr_high", "zf_psnr_low", "zf_psnr_high")]
            for r in report.rows]


BAND_HEADER = ["sample_id", "low_psnr", "high_psnr", "zf_low_psnr", "zf_high_psnr"]


def _band_series(report):
    return {"zero-filled": (report.mean("zf_psnr_low"), report.mean("zf_psnr_high")),
            "model": (report.mean("psnr_low"), report.mean("psnr_high"))}


def cmd_eval(cfg, out):
    data = load_dataset(cfg["dataset"])
    model, params = _load_model(cfg)
    report = training.evaluate(params, model, data, _unroll(cfg), low_fraction=cfg["low_fraction"])
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    _write_csv(out / "bands.csv", BAND_HEADER, _band_rows(report))
    plotting.band_bars(_band_series(report), out / "bands.png")
    print(f"PSNR {report.mean('psnr'):.3f} dB (zero-filled {report.mean('zf_psnr'):.3f} dB), "
          f"SSIM {report.mean('ssim'):.4f} (zero-filled {report.mean('zf_ssim'):.4f})")


def cmd_kspace_analysis(cfg, out):
    data = load_dataset(cfg["dataset"])
    if cfg["checkpoint"]:
        model, params = _load_model(cfg)
        recons = training.reconstruct_dataset(params, model, data, _unroll(cfg))
    else:
        log.info("no checkpoint given; analysing the zero-filled reconstructions")
        model, recons = cfgmod.model_config(cfg), kspace.zero_fill(data.kspace, data.masks)
    report = training.evaluate(None, model, data, _unroll(cfg), recons=recons, low_fraction=cfg["low_fraction"])
    _write_csv(out / "bands.csv", BAND_HEADER, _band_rows(report))
    plotting.band_bars(_band_series(report), out / "bands.png")
    print(f"low band {report.mean('psnr_low'):.3f} dB, high band {report.mean('psnr_high'):.3f} dB "
          f"(zero-filled {report.mean('zf_psnr_low'):.3f} / {report.mean('zf_psnr_high'):.3f})")


def cmd_ablate(cfg, out):
    data = load_dataset(cfg["dataset"])
    report = training.ablation_run(cfgmod.train_config(cfg), data, seeds=cfg["ablation_seeds"])
    (out / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "ablation.txt").write_text(report.table(), encoding="utf-8")
    plotting.ablation_bars(report, out / "ablation.png")
    print(report.table(), end="")


def cmd_sweep_unroll(cfg, out):
    data = load_dataset(cfg["dataset"])
    rows = training.unroll_sweep(cfgmod.train_config(cfg), data, cfg["sweep_unrolls"])
    (out / "unroll.csv").write_text(training.sweep_csv(rows), encoding="utf-8")
    plotting.unroll_curve(rows, out / "unroll.png")
    for T, p, s, secs in rows:
        print(f"T={T}: PSNR {p:.3f} dB, SSIM {s:.4f}, {secs:.1f}s")


def cmd_selftest(cfg, out):
    return 0 if selftest.run() else 1


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "recon": cmd_recon, "eval": cmd_eval,
    "ablate": cmd_ablate, "sweep-unroll": cmd_sweep_unroll, "kspace-analysis": cmd_kspace_analysis,
    "selftest": cmd_selftest,
}


def _where(exc):
    """``module.function`` of the innermost package frame that raised ``exc``."""
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        path = Path(frame.filename)
        if "rtrecon" in path.parts and path.stem != "cli":
            return f"{path.stem}.{frame.name}"
    return "cli"


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageFailure as exc:
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    out = Path(args.out)
    try:
        cfg = _resolve(args)
        cfgmod.write_echo(cfg, out, header=[f"command = {args.command}"])
    except ConfigError as exc:
        print(f"rtrecon {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        code = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"rtrecon {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ReconError, OSError) as exc:
        print(f"rtrecon {args.command}: {type(exc).__name__} in {_where(exc)}: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
