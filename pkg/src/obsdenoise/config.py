"""Run configuration: defaults < TOML file < environment < command-line flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dataset import DatasetConfig
from .models import ModelSpec
from .nn import TrainConfig
from .sensor import NoiseConfig
from .world import KinematicsConfig

ENV_PREFIX = "OBSDENOISE_"


@dataclass(frozen=True)
class EvalConfig:
    min_samples: int = 20
    pc_max: int = 30
    dist_step: float = 2.0
    dist_max: float = 40.0
    min_pos_count: int = 2

    def __post_init__(self):
        if self.min_samples < 1 or self.pc_max < 0 or self.dist_step <= 0 or self.dist_max <= 0:
            raise ValueError("invalid evaluation binning")


@dataclass(frozen=True)
class RunConfig:
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dnn: ModelSpec = field(default_factory=lambda: ModelSpec("dnn"))
    lstm: ModelSpec = field(default_factory=lambda: ModelSpec("lstm"))
    eval: EvalConfig = field(default_factory=EvalConfig)
    jobs: int = 1

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def hash(self) -> str:
        """Digest of every setting that can change an output (``jobs`` excluded)."""
        d = self.to_dict()
        d.pop("jobs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> str:
        return f"config_hash={self.hash()}"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _coerce(value: Any, current: Any, where: str):
    if isinstance(current, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{where}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(current, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        return tuple(int(v) for v in value)
    return value if not isinstance(current, str) else str(value)


def _apply(section, overrides: Mapping[str, Any], where: str):
    names = {f.name: f for f in dataclasses.fields(section)}
    changes = {}
    for key, value in overrides.items():
        if key not in names:
            raise ValueError(f"unknown setting {where}.{key}")
        current = getattr(section, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, Mapping):
                raise ValueError(f"{where}.{key} must be a table")
            changes[key] = _apply(current, value, f"{where}.{key}")
        else:
            changes[key] = _coerce(value, current, f"{where}.{key}")
    return dataclasses.replace(section, **changes)


def merge(cfg: RunConfig, overrides: Mapping[str, Any], where: str = "config") -> RunConfig:
    return _apply(cfg, overrides, where)


def load_file(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """``OBSDENOISE_TRAIN__EPOCHS=3`` -> ``{"train": {"epochs": "3"}}``."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return out


def resolve(
    config_file: str | Path | None = None,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    cfg = RunConfig()
    if config_file:
        cfg = merge(cfg, load_file(config_file), str(config_file))
    env = env_overrides(environ)
    if env:
        cfg = merge(cfg, env, "environment")
    if flags:
        cfg = merge(cfg, flags, "flags")
    return cfg
