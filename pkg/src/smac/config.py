"""Run configuration files.

One ``key = value`` per line; ``#`` starts a comment. Keys are the fields of
NetworkConfig and TrainConfig plus ``dataset``, ``out_dir`` and ``preset``
(``toy`` or ``full``, applied before the other keys). Tuples are written
comma-separated; floats also accept ``a/b`` fractions.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Optional

from smac.errors import ConfigError
from smac.network import NetworkConfig
from smac.train import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: Optional[str] = None
    out_dir: Optional[str] = None


def _number(text: str, kind, key: str):
    try:
        if kind is int:
            return int(text)
        return float(Fraction(text.replace(" ", ""))) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def _convert(key: str, text: str, default: Any):
    if isinstance(default, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ConfigError(f"{key}: empty list")
        return tuple(_number(p, kind, key) for p in parts)
    if isinstance(default, (int, float)):
        return _number(text, type(default), key)
    return text


def parse_lines(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _apply(obj, updates: Dict[str, str]):
    changes = {}
    for f in dataclasses.fields(obj):
        if f.name in updates:
            changes[f.name] = _convert(f.name, updates[f.name], getattr(obj, f.name))
    return dataclasses.replace(obj, **changes)


def build(values: Dict[str, str]) -> RunConfig:
    net_keys = {f.name for f in dataclasses.fields(NetworkConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    extra = {"dataset", "out_dir", "preset"}
    unknown = sorted(set(values) - net_keys - train_keys - extra)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    preset = values.get("preset", "toy")
    if preset == "toy":
        net, train = NetworkConfig(), TrainConfig()
    elif preset == "full":
        net, train = NetworkConfig.full(), TrainConfig.full()
    else:
        raise ConfigError(f"preset must be 'toy' or 'full', got {preset!r}")
    net = _apply(net, {k: v for k, v in values.items() if k in net_keys})
    train = _apply(train, {k: v for k, v in values.items() if k in train_keys})
    net.validate()
    train.validate()
    return RunConfig(net, train, values.get("dataset"), values.get("out_dir"))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8") from None
    return build(parse_lines(text, str(path)))


def dump_config(cfg: RunConfig) -> str:
    """Render a RunConfig back into the file grammar."""
    lines = []
    for obj in (cfg.network, cfg.train):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {v}")
    for key in ("dataset", "out_dir"):
        if getattr(cfg, key) is not None:
            lines.append(f"{key} = {getattr(cfg, key)}")
    return "\n".join(lines) + "\n"
