"""Run configuration: a flat set of dotted keys with typed defaults.

Config files are INI documents; ``[section]`` plus ``key = value`` maps to
the dotted key ``section.key``; keys before the first header (``seed``)
are top-level.  Example::

    seed = 7

    [head]
    kind = egp
    d = 32

    [train]
    preset = synthetic

Values are parsed according to the key's type; ``none`` clears an optional
key.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import json
from typing import Any

PRESETS = {
    "paper": {"train.learning_rate": 2e-5, "train.batch_size": 32, "train.epochs": 30},
    "synthetic": {"train.learning_rate": 1e-3, "train.batch_size": 16, "train.epochs": 200},
}

# key -> (type, default, optional)
SCHEMA: dict[str, tuple[type, Any, bool]] = {
    "seed": (int, 1, False),
    "rope.enabled": (bool, True, False),
    "rope.base": (float, 10000.0, False),
    "head.kind": (str, "gp", False),
    "head.d": (int, 64, False),
    "head.max_span_len": (int, None, True),
    "head.init": (str, "glorot", False),
    "encoder.kind": (str, "embedding", False),
    "encoder.v": (int, 64, False),
    "encoder.mixing": (bool, True, False),
    "encoder.init": (str, "uniform", False),
    "encoder.embeddings": (str, None, True),
    "loss.kind": (str, "global-pointer", False),
    "loss.threshold": (float, 0.0, False),
    "decode.mode": (str, "nested", False),
    "decode.threshold": (float, 0.0, False),
    "train.preset": (str, "paper", False),
    "train.epochs": (int, 30, False),
    "train.batch_size": (int, 32, False),
    "train.learning_rate": (float, 2e-5, False),
    "train.beta1": (float, 0.9, False),
    "train.beta2": (float, 0.999, False),
    "train.eps": (float, 1e-8, False),
    "train.clip_norm": (float, None, True),
    "train.target_f1": (float, None, True),
    "data.train": (str, None, True),
    "data.dev": (str, None, True),
    "eval.buckets": (str, "sentence_length,entity_length,density", False),
}

CHOICES = {
    "head.kind": ("gp", "egp", "egp-h"),
    "head.init": ("glorot", "zeros"),
    "encoder.kind": ("embedding", "precomputed"),
    "encoder.init": ("uniform", "zeros"),
    "loss.kind": ("global-pointer", "bce"),
    "decode.mode": ("nested", "flat"),
    "train.preset": ("paper", "synthetic"),
}


class ConfigError(ValueError):
    pass


def _parse(key: str, raw) -> Any:
    typ, _, optional = SCHEMA[key]
    if isinstance(raw, str):
        text = raw.strip()
        if text.lower() in ("none", "null", ""):
            if not optional:
                raise ConfigError(f"{key} may not be empty")
            return None
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        try:
            return typ(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None
    if raw is None:
        if not optional:
            raise ConfigError(f"{key} may not be empty")
        return None
    if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, typ) or (typ is int and isinstance(raw, bool)):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}")
    return raw


def resolve(file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, then the preset, then file values, then overrides."""
    merged: dict[str, Any] = {}
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = _parse(k, v)
    cfg = {k: spec[1] for k, spec in SCHEMA.items()}
    preset = merged.get("train.preset", cfg["train.preset"])
    if preset not in PRESETS:
        raise ConfigError(f"train.preset must be one of {sorted(PRESETS)}, got {preset!r}")
    cfg.update(PRESETS[preset])
    cfg.update(merged)
    validate(cfg)
    return cfg


def validate(cfg: dict[str, Any]) -> None:
    for k, choices in CHOICES.items():
        if cfg[k] not in choices:
            raise ConfigError(f"{k} must be one of {choices}, got {cfg[k]!r}")
    for k in ("train.learning_rate", "train.eps", "rope.base"):
        if cfg[k] <= 0:
            raise ConfigError(f"{k} must be positive")
    for k in ("train.epochs", "train.batch_size", "head.d", "encoder.v"):
        if cfg[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    if cfg["rope.enabled"] and cfg["head.d"] % 2:
        raise ConfigError("head.d must be even when rope is enabled")
    if cfg["head.max_span_len"] is not None and cfg["head.max_span_len"] < 1:
        raise ConfigError("head.max_span_len must be >= 1")
    if not 0 <= cfg["train.beta1"] < 1 or not 0 <= cfg["train.beta2"] < 1:
        raise ConfigError("adam betas must lie in [0, 1)")


_TOP = "__top__"


def read_config(path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    with open(path, encoding="utf-8") as fh:
        # keys before the first section header are top-level (e.g. seed)
        parser.read_string(f"[{_TOP}]\n" + fh.read(), source=str(path))
    out = dict(parser.defaults())
    for section in parser.sections():
        for key, value in parser.items(section, raw=True):
            if key in parser.defaults():
                continue
            out[key if section == _TOP else f"{section}.{key}"] = value
    for k in out:
        if k not in SCHEMA:
            raise ConfigError(f"{path}: unknown config key {k!r}")
    return out


def load(path=None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    return resolve(read_config(path) if path else None, overrides)


def dumps(cfg: dict[str, Any]) -> str:
    """Canonical JSON rendering (sorted keys) for embedding in artifacts."""
    return json.dumps(cfg, sort_keys=True)


def to_ini(cfg: dict[str, Any]) -> str:
    sections: dict[str, list[str]] = {}
    top = []
    for k in sorted(cfg):
        v = cfg[k]
        text = "none" if v is None else (str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v))
        if "." in k:
            sec, key = k.split(".", 1)
            sections.setdefault(sec, []).append(f"{key} = {text}")
        else:
            top.append(f"{k} = {text}")
    parts = []
    if top:
        parts.append("\n".join(top))
    parts += [f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items()]
    return "\n\n".join(parts) + "\n"
