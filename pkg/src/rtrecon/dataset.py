"""Simulated under-sampled datasets on disk.

Layout::

    out_dir/manifest.txt
    out_dir/sample_0000.gt.rfk      ground truth image (H, W, 2) float64
    out_dir/sample_0000.ksp.rfk     masked k-space (H, W, 2) float64
    out_dir/sample_0000.mask.rfk    column mask (W,) float32 of 0/1
    ...

The manifest is ``key = value`` lines, a ``[samples]`` marker, and a
tab-separated table with one row per sample.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kspace
from .errors import ConfigError, FormatError
from .phantom import PhantomSpec, gen_phantom
from .records import load_record, save_record

VERSION = "rfk-dataset-1"
SAMPLE_COLUMNS = ("id", "gt", "kspace", "mask", "seed")


@dataclass
class SampleEntry:
    sample_id: int
    gt_file: str
    kspace_file: str
    mask_file: str
    seed: int


@dataclass
class DatasetManifest:
    count: int
    height: int
    width: int
    acceleration: float
    center_fraction: float
    noise_sigma: float
    master_seed: int
    samples: list
    version: str = VERSION

    def to_text(self):
        lines = [
            f"version = {self.version}",
            f"count = {self.count}",
            f"height = {self.height}",
            f"width = {self.width}",
            f"acceleration = {self.acceleration!r}",
            f"center_fraction = {self.center_fraction!r}",
            f"noise_sigma = {self.noise_sigma!r}",
            f"master_seed = {self.master_seed}",
            "[samples]",
            "\t".join(SAMPLE_COLUMNS),
        ]
        for s in self.samples:
            lines.append(f"{s.sample_id}\t{s.gt_file}\t{s.kspace_file}\t{s.mask_file}\t{s.seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        head, sep, table = text.partition("[samples]\n")
        if not sep:
            raise FormatError("manifest lacks a [samples] section")
        meta = {}
        for lineno, line in enumerate(head.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise FormatError(f"manifest line {lineno} is not key = value", lineno)
            meta[key.strip()] = value.strip()
        rows = table.splitlines()
        if not rows or tuple(rows[0].split("\t")) != SAMPLE_COLUMNS:
            raise FormatError("manifest sample table has an unexpected header")
        samples = []
        for row in rows[1:]:
            if not row.strip():
                continue
            parts = row.split("\t")
            if len(parts) != len(SAMPLE_COLUMNS):
                raise FormatError(f"malformed sample row {row!r}")
            samples.append(SampleEntry(int(parts[0]), parts[1], parts[2], parts[3], int(parts[4])))
        try:
            manifest = cls(int(meta["count"]), int(meta["height"]), int(meta["width"]),
                           float(meta["acceleration"]), float(meta["center_fraction"]),
                           float(meta["noise_sigma"]), int(meta["master_seed"]), samples,
                           meta.get("version", VERSION))
        except KeyError as exc:
            raise FormatError(f"manifest lacks key {exc.args[0]!r}") from None
        if manifest.count != len(samples):
            raise FormatError(f"manifest count {manifest.count} != {len(samples)} sample rows")
        return manifest


def simulate_sample(spec, acceleration, center_fraction, noise_sigma, seed):
    """Phantom, mask and measured k-space for one per-sample seed."""
    y = gen_phantom(replace(spec, seed=seed))
    mask = kspace.make_cartesian_mask(spec.width, acceleration, center_fraction, seed)
    x = kspace.forward_model(y, mask, noise_sigma, seed)
    return y, mask, x


def build_dataset(n, spec, acceleration, noise_sigma, master_seed, out_dir, center_fraction=None):
    """Simulate ``n`` samples with seeds ``master_seed + index`` and write them."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    if center_fraction is None:
        center_fraction = kspace.DEFAULT_CENTER_FRACTION.get(int(acceleration), 0.08)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for idx in range(n):
        seed = master_seed + idx
        y, mask, x = simulate_sample(spec, acceleration, center_fraction, noise_sigma, seed)
        stem = f"sample_{idx:04d}"
        entry = SampleEntry(idx, f"{stem}.gt.rfk", f"{stem}.ksp.rfk", f"{stem}.mask.rfk", seed)
        save_record(out / entry.gt_file, "gt", y)
        save_record(out / entry.kspace_file, "kspace", x)
        save_record(out / entry.mask_file, "mask", mask.columns.astype(np.float32))
        samples.append(entry)
    manifest = DatasetManifest(n, spec.height, spec.width, float(acceleration), float(center_fraction),
                               float(noise_sigma), int(master_seed), samples)
    (out / "manifest.txt").write_text(manifest.to_text(), encoding="utf-8")
    return manifest


@dataclass
class Dataset:
    """In-memory arrays: gt and kspace ``(n, H, W, 2)``, masks ``(n, W)`` bool."""

    manifest: DatasetManifest
    gt: np.ndarray
    kspace: np.ndarray
    masks: np.ndarray

    def __len__(self):
        return self.gt.shape[0]

    def mask(self, idx):
        m = self.manifest
        return kspace.SamplingMask(self.masks[idx].copy(), m.acceleration, m.center_fraction,
                                   m.samples[idx].seed)


def read_manifest(root):
    path = Path(root) / "manifest.txt"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    return DatasetManifest.from_text(text)


def load_dataset(root):
    root = Path(root)
    manifest = read_manifest(root)
    gts, ksps, masks = [], [], []
    for s in manifest.samples:
        for fname in (s.gt_file, s.kspace_file, s.mask_file):
            if not (root / fname).exists():
                raise FormatError(f"dataset file missing: {root / fname}")
        gts.append(load_record(root / s.gt_file, "gt"))
        ksps.append(load_record(root / s.kspace_file, "kspace"))
        masks.append(load_record(root / s.mask_file, "mask") > 0.5)
    return Dataset(manifest, np.stack(gts), np.stack(ksps), np.stack(masks))
