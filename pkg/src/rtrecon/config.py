"""``key = value`` run configuration with typed defaults and overrides.

A run is described by one flat mapping. Defaults come from the dataclasses
they feed (:class:`ModelConfig`, :class:`TrainConfig`, :class:`PhantomSpec`),
so the library and the command line never disagree. The resolved mapping is
echoed as ``effective_config.txt`` and can be fed back with ``--config``.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .network import ModelConfig
from .phantom import PhantomSpec
from .training import TrainConfig

ECHO_NAME = "effective_config.txt"

_MODEL_KEYS = [f.name for f in fields(ModelConfig)]
_TRAIN_KEYS = ["dataset", "steps", "epochs", "batch_size", "lr", "grad_clip", "seed", "checkpoint"]
_PHANTOM_KEYS = ["min_ellipses", "max_ellipses", "intensity_range", "phase_order"]


def _defaults():
    model = ModelConfig()
    train = TrainConfig()
    spec = PhantomSpec()
    out = {"n": 8, "acceleration": 4.0, "center_fraction": "auto", "noise_sigma": 0.0}
    out.update({k: getattr(spec, k) for k in _PHANTOM_KEYS})
    out.update({k: getattr(model, k) for k in _MODEL_KEYS})
    out.update({k: getattr(train, k) for k in _TRAIN_KEYS})
    out.update({"eval_unroll": 0, "low_fraction": 1 / 3, "sample": 0,
                "ablation_seeds": (0, 1, 2), "sweep_unrolls": (1, 2, 3, 4, 5)})
    return out


DEFAULTS = _defaults()
_FLOAT_TUPLES = {"intensity_range"}


def _coerce(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            conv = float if key in _FLOAT_TUPLES else int
            parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            return tuple(conv(p) for p in parts)
        if key == "center_fraction" and text != "auto":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_overrides(items):
    return parse_text("\n".join(items), "--set")


def resolve(path=None, overrides=(), extra=None):
    """Defaults, then the config file, then ``--set`` overrides, then ``extra``."""
    cfg = dict(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg.update(parse_text(text, str(path)))
    cfg.update(parse_overrides(list(overrides)))
    for key, value in (extra or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_text(cfg, header=()):
    lines = [f"# {h}" for h in header]
    lines += [f"{k} = {_render(cfg[k])}" for k in DEFAULTS]
    return "\n".join(lines) + "\n"


def write_echo(cfg, out_dir, header=()):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ECHO_NAME
    path.write_text(to_text(cfg, header), encoding="utf-8")
    return path


def model_config(cfg):
    return ModelConfig(**{k: cfg[k] for k in _MODEL_KEYS})


def train_config(cfg, log_path=""):
    return TrainConfig(model=model_config(cfg), log_path=log_path,
                       **{k: cfg[k] for k in _TRAIN_KEYS})


def phantom_spec(cfg):
    return PhantomSpec(height=cfg["height"], width=cfg["width"],
                       **{k: cfg[k] for k in _PHANTOM_KEYS})


def center_fraction(cfg):
    cf = cfg["center_fraction"]
    return None if cf == "auto" else float(cf)
