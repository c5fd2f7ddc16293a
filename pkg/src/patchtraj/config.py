"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError


@dataclass
class RunConfig:
    # data: a path to trajectory text files, or empty to use the synthetic corpus
    data: str = ""
    synthetic_kind: str = "constant-velocity,sinusoid"
    synthetic_count: int = 32
    synthetic_seed: int = 0
    frame_step: int = 1
    stride: int = 1
    val_fraction: float = 0.2

    t_obs: int = 8
    t_pred: int = 12
    dt: float = 0.4
    scales: tuple = (8, 4, 2)
    spectral_len: int = 8

    d_model: int = 256
    num_blocks: int = 4
    num_heads: int = 4
    num_experts: int = 4
    top_k: int = 2
    num_hypotheses: int = 20

    lambda_joint: float = 0.5
    loss_norm: str = "block"

    batch_size: int = 12
    epochs: int = 200
    lr: float = 1e-3
    lr_interval: int = 10
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        self.validate()

    def validate(self):
        positive = ["synthetic_count", "frame_step", "stride", "t_obs", "t_pred", "spectral_len", "d_model",
                    "num_heads", "num_experts", "top_k", "num_hypotheses", "batch_size", "epochs", "lr_interval"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_blocks < 0:
            raise ConfigError(f"num_blocks must be non-negative, got {self.num_blocks}")
        if not self.dt > 0 or not self.lr > 0:
            raise ConfigError("dt and lr must be positive")
        if self.lambda_joint < 0:
            raise ConfigError(f"lambda_joint must be non-negative, got {self.lambda_joint}")
        if self.grad_clip < 0 or self.weight_decay < 0:
            raise ConfigError("grad_clip and weight_decay must be non-negative")
        if not self.spectral_len <= self.t_obs + self.t_pred:
            raise ConfigError(f"spectral_len {self.spectral_len} exceeds padded length {self.t_obs + self.t_pred}")
        if self.top_k > self.num_experts:
            raise ConfigError(f"top_k {self.top_k} exceeds num_experts {self.num_experts}")
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if not self.scales or len(set(self.scales)) != len(self.scales):
            raise ConfigError(f"scales must be non-empty and distinct, got {self.scales}")
        for s in self.scales:
            if s <= 0 or self.t_obs % s or self.spectral_len % s:
                raise ConfigError(f"patch size {s} must divide t_obs={self.t_obs} and spectral_len={self.spectral_len}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.loss_norm not in ("block", "per_step"):
            raise ConfigError(f"loss_norm must be 'block' or 'per_step', got {self.loss_norm!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _convert(name: str, kind, raw: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    hints = get_type_hints(RunConfig)
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in hints:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {line_no}: duplicate key {key!r}")
        values[key] = _convert(key, hints[key], raw)
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: RunConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
