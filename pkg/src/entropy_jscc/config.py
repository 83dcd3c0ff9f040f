"""Flat key-value configuration.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment. Values are parsed as Python literals when possible (numbers,
lists, booleans) and kept as strings otherwise::

    # desk-scale run
    train.stage_epochs = [10, 10, 5, 5]
    train.batch_size = 128
    entropy.temperature = 0.5

Documented keys and their defaults live in :data:`DEFAULTS`.
"""

from __future__ import annotations

import ast
import copy
from pathlib import Path
from typing import Any, Iterable, Mapping

# SNR inputs to the learned modules are divided by this.
SNR_SCALE = 15.0

DEFAULTS: dict[str, Any] = {
    # semantic codec
    "model.num_maps": 16,  # 2C feature maps out of the encoder
    "model.width": 64,  # channels inside S2 / decoder trunk
    "model.policy_hidden": 64,
    "model.seed": 0,
    # entropy estimator
    "entropy.bins": 16,
    "entropy.temperature": 0.5,
    "entropy.range": 4.0,
    # rate control
    "rate.prune_ratios": [0.0, 0.2, 0.25, 0.3, 0.35],
    "rate.gumbel_temperature": 1.0,
    # training
    "train.alpha": 2e-4,
    "train.beta": 1e-5,
    "train.batch_size": 512,
    "train.stage_epochs": [200, 200, 100, 100],
    "train.stage_lrs": [5e-4, 5e-5, 1e-5, 1e-5],
    "train.snr_min": 0.0,
    "train.snr_max": 15.0,
    "train.seed": 0,
    "train.checkpoint_every": 0,
    "train.limit": 0,
    # evaluation
    "eval.snr_list": [0.0, 5.0, 10.0, 15.0],
    "eval.seed": 0,
    "eval.batch_size": 256,
    "eval.limit": 0,
}

# Keys that change tensor shapes or the meaning of stored weights.
ARCHITECTURE_KEYS = (
    "model.num_maps",
    "model.width",
    "model.policy_hidden",
    "entropy.bins",
    "entropy.temperature",
    "entropy.range",
    "rate.prune_ratios",
)


class ConfigError(ValueError):
    """Raised for unknown keys or values outside their valid domain."""


def _parse_value(text: str) -> Any:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        value = _parse_value(value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        if isinstance(value, (int, float)):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        kind = type(default[0])
        return [kind(v) for v in value]
    return value


class Config(dict):
    """Dictionary of dotted keys, pre-filled with :data:`DEFAULTS`."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        super().__init__(copy.deepcopy(DEFAULTS))
        if values:
            self.update_values(values)

    def update_values(self, values: Mapping[str, Any]) -> "Config":
        for key, value in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self[key] = _coerce(key, value)
        self.validate()
        return self

    def validate(self) -> None:
        if self["model.num_maps"] < 2 or self["model.num_maps"] % 2:
            raise ConfigError("model.num_maps must be a positive even number")
        if self["entropy.bins"] < 2:
            raise ConfigError("entropy.bins must be >= 2")
        if self["entropy.temperature"] <= 0:
            raise ConfigError("entropy.temperature must be > 0")
        if self["entropy.range"] <= 0:
            raise ConfigError("entropy.range must be > 0")
        ratios = self["rate.prune_ratios"]
        if not ratios or any(not 0.0 <= a < 1.0 for a in ratios):
            raise ConfigError("rate.prune_ratios must be non-empty, each in [0, 1)")
        if ratios[0] != 0.0:
            raise ConfigError("rate.prune_ratios must start with 0 (no pruning)")
        if self["rate.gumbel_temperature"] <= 0:
            raise ConfigError("rate.gumbel_temperature must be > 0")
        if self["train.alpha"] < 0 or self["train.beta"] < 0:
            raise ConfigError("train.alpha and train.beta must be non-negative")
        if len(self["train.stage_epochs"]) != 4 or len(self["train.stage_lrs"]) != 4:
            raise ConfigError("train.stage_epochs and train.stage_lrs need four entries")
        if any(e < 0 for e in self["train.stage_epochs"]):
            raise ConfigError("train.stage_epochs must be non-negative")
        if self["train.snr_min"] > self["train.snr_max"]:
            raise ConfigError("train.snr_min must not exceed train.snr_max")
        if self["train.batch_size"] < 1 or self["eval.batch_size"] < 1:
            raise ConfigError("batch sizes must be >= 1")

    @property
    def num_pairs(self) -> int:
        return self["model.num_maps"] // 2

    def architecture(self) -> dict[str, Any]:
        return {k: copy.deepcopy(self[k]) for k in ARCHITECTURE_KEYS}

    def dumps(self) -> str:
        return "".join(f"{k} = {self[k]!r}\n" for k in sorted(self))


def parse_lines(lines: Iterable[str]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = _parse_value(value)
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> Config:
    """Read a config file (optional) and apply ``overrides`` on top."""
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_lines(fh))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(values)
