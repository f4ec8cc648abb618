"""Run configuration: one flat set of tunables, file < flag precedence.

Config files are plain `key = value` lines (# comments allowed). Unknown
keys are rejected. The effective config is echoed into every JSON artifact
a command writes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ENV_CONFIG = "SONGGRAPH_CONFIG"


@dataclass
class RunConfig:
    pattern_len: int = 8
    kernel_half_width: int = 8
    sigma: float = 0.5
    novelty_thresh: float | None = None
    ssm_thresh: float = 0.8
    hu_thresh: float = 0.1
    latent_dim: int = 32
    hidden_dim: int = 64
    time_dim: int = 16
    ae_hidden: int = 512
    mask_ratio: float = 0.3
    genre_loss_weight: float = 1.0
    drop_edge_p: float = 0.1
    drop_node_p: float = 0.05
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 8
    mmd_weight: float = 0.0
    decode_threshold: float = 1.0
    keep_bars: int = 8
    seed: int = 0
    workers: int = 4

    def validate(self) -> "RunConfig":
        positive = (
            "pattern_len", "kernel_half_width", "sigma", "latent_dim", "hidden_dim",
            "time_dim", "ae_hidden", "batch_size", "keep_bars", "workers",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("mask_ratio", "drop_edge_p", "drop_node_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.time_dim % 2:
            raise ConfigError("time_dim must be even")
        if self.epochs < 0 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0 and lr positive")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, kind, raw: str):
    text = raw.strip()
    if text.lower() in ("none", "null"):
        return None
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return text


_FIELD_TYPES = {
    "pattern_len": int, "kernel_half_width": int, "sigma": float,
    "novelty_thresh": float, "ssm_thresh": float, "hu_thresh": float,
    "latent_dim": int, "hidden_dim": int, "time_dim": int, "ae_hidden": int,
    "mask_ratio": float, "genre_loss_weight": float, "drop_edge_p": float,
    "drop_node_p": float, "epochs": int, "lr": float, "batch_size": int,
    "mmd_weight": float, "decode_threshold": float, "keep_bars": int,
    "seed": int, "workers": int,
}


def parse_config_file(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, _FIELD_TYPES[key], value)
    return values


def make_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file (explicit path or $SONGGRAPH_CONFIG) <- overrides."""
    values: dict = {}
    path = config_path or os.environ.get(ENV_CONFIG)
    if path:
        file = Path(path)
        if not file.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_file(file.read_text()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(**values).validate()
