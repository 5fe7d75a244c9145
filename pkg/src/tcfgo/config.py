"""YAML run configuration: dataclass <-> plain data, and the effective-config echo.

Angles inside the config sections are radians, matching the dataclass fields.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .estimator import EstimatorConfig
from .sim import ScenarioConfig

ECHO_NAME = "effective_config.yaml"


def to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {to_plain(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, float):
        return float(obj)
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def _coerce(tp, value):
    if value is None:
        return None
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        for a in args:
            if a is not type(None):
                return _coerce(a, value)
    if dataclasses.is_dataclass(tp) and isinstance(value, dict):
        return from_plain(tp, value)
    if origin is tuple:
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in value)
        return tuple(_coerce(a, v) for a, v in zip(args, value))
    if origin is list:
        return [_coerce(args[0], v) for v in value]
    if origin is dict:
        return {_coerce(args[0], k): _coerce(args[1], v) for k, v in value.items()}
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(value)
    if tp is float:
        return float(value)
    if tp is int and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_plain(cls, data: Optional[dict]):
    data = dict(data or {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**{k: _coerce(hints[k], v) for k, v in data.items()})


@dataclass
class RunConfig:
    """Everything a CLI run needs; `scenario` drives simulate, `estimator` drives run."""
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mode: str = "tc"
    imu: Optional[str] = None
    gnss: Optional[str] = None
    truth: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("tc", "spp"):
            raise ValueError(f"mode must be 'tc' or 'spp', got {self.mode!r}")

    @property
    def seed(self) -> int:
        return self.scenario.seed


def load_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return from_plain(RunConfig, data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_plain(cfg), sort_keys=True, default_flow_style=False)


def write_echo(cfg: RunConfig, out_dir: str | Path) -> Path:
    path = Path(out_dir) / ECHO_NAME
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def parse_lag(text: str) -> float:
    v = float(text)
    if not (v > 0 or math.isinf(v)):
        raise ValueError(f"lag must be positive or inf, got {text}")
    return v
