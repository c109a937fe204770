"""Run configuration: nested dataclasses mirrored as flat dotted-key JSON.

The flat form ("model.base_channels": 32, ...) is the on-disk contract; every
run persists its fully resolved config next to its outputs, and the sha256 of
the canonical JSON identifies the run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

__all__ = [
    "ConfigError",
    "ModelConfig",
    "FlagConfig",
    "OptimConfig",
    "TrainConfig",
    "RunConfig",
    "to_flat",
    "from_flat",
    "config_hash",
    "load_config",
    "save_config",
    "RUNG_NAMES",
    "rung_flags",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


@dataclass
class ModelConfig:
    base_channels: int = 32
    c_text: int = 64
    window_size: int = 5
    max_len: int = 24
    text_blocks: int = 2
    text_heads: int = 4
    groups: int = 8


@dataclass
class FlagConfig:
    use_target_prompt: bool = False
    use_mfa: bool = False
    use_visual_guidance: bool = False


@dataclass
class OptimConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2


@dataclass
class TrainConfig:
    steps: int = 600
    batch_size: int = 8
    seed: int = 0
    log_every: int = 25
    template: str = "manual"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    flags: FlagConfig = field(default_factory=FlagConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str = ""
    guidance: str = "seed:17"

    def validate(self) -> "RunConfig":
        m = self.model
        if m.window_size < 3 or m.window_size % 2 == 0:
            raise ConfigError(f"model.window_size: must be odd and >= 3, got {m.window_size}")
        for name in ("base_channels", "c_text", "max_len", "text_blocks", "text_heads"):
            if getattr(m, name) <= 0:
                raise ConfigError(f"model.{name}: must be positive")
        if m.base_channels % 16:
            raise ConfigError(f"model.base_channels: must be a multiple of 16, got {m.base_channels}")
        if m.c_text % self.model.text_heads:
            raise ConfigError("model.c_text: must be divisible by model.text_heads")
        if self.optim.lr <= 0:
            raise ConfigError(f"optim.lr: must be positive, got {self.optim.lr}")
        if self.train.steps < 0 or self.train.batch_size <= 0:
            raise ConfigError("train.steps/train.batch_size: must be nonnegative/positive")
        if self.train.template not in ("manual", "describes"):
            raise ConfigError(f"train.template: unknown template {self.train.template!r}")
        return self


_SECTIONS = {"model": ModelConfig, "flags": FlagConfig, "optim": OptimConfig, "train": TrainConfig}
_SCALARS = ("corpus", "guidance")


def to_flat(cfg: RunConfig) -> dict:
    out: dict = {}
    for sec, klass in _SECTIONS.items():
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(klass):
            out[f"{sec}.{f.name}"] = getattr(obj, f.name)
    for name in _SCALARS:
        out[name] = getattr(cfg, name)
    return out


def from_flat(flat: dict) -> RunConfig:
    cfg = RunConfig()
    known = set(to_flat(cfg))
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    for key, val in flat.items():
        if key in _SCALARS:
            if not isinstance(val, str):
                raise ConfigError(f"{key}: expected string, got {type(val).__name__}")
            setattr(cfg, key, val)
            continue
        sec, name = key.split(".", 1)
        obj = getattr(cfg, sec)
        current = getattr(obj, name)
        want = type(current)
        if want is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"{key}: expected bool, got {val!r}")
        elif want is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{key}: expected int, got {val!r}")
        elif want is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{key}: expected number, got {val!r}")
            val = float(val)
        setattr(obj, name, val)
    return cfg.validate()


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(to_flat(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_config(cfg: RunConfig, path: str) -> None:
    flat = to_flat(cfg)
    flat["config_hash"] = config_hash(cfg)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(flat, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        flat = json.load(f)
    stored = flat.pop("config_hash", None)
    cfg = from_flat(flat)
    if stored is not None and stored != config_hash(cfg):
        raise ConfigError(f"{path}: stored config_hash does not match contents")
    return cfg


RUNG_NAMES = ("baseline", "+ TP", "+ MFA&VG")


def rung_flags(rung: str) -> FlagConfig:
    """Ablation ladder: all off → prompt only → everything on."""
    if rung == "baseline":
        return FlagConfig(False, False, False)
    if rung == "+ TP":
        return FlagConfig(True, False, False)
    if rung == "+ MFA&VG":
        return FlagConfig(True, True, True)
    raise ConfigError(f"unknown ablation rung {rung!r}")
