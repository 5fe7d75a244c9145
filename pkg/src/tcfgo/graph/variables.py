"""Variable keys and manifold values for the factor graph."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from ..geo import so3_exp, so3_log


class VariableKind(enum.IntEnum):
    POSE = 0
    VELOCITY = 1
    IMU_BIAS = 2
    CLOCK_BIAS = 3
    CLOCK_DRIFT = 4


class VariableKey(NamedTuple):
    kind: VariableKind
    epoch: int

    def __str__(self) -> str:
        return f"{self.kind.name.lower()}[{self.epoch}]"


def P(k: int) -> VariableKey:
    return VariableKey(VariableKind.POSE, k)


def V(k: int) -> VariableKey:
    return VariableKey(VariableKind.VELOCITY, k)


def B(k: int) -> VariableKey:
    return VariableKey(VariableKind.IMU_BIAS, k)


def C(k: int) -> VariableKey:
    return VariableKey(VariableKind.CLOCK_BIAS, k)


def D(k: int) -> VariableKey:
    return VariableKey(VariableKind.CLOCK_DRIFT, k)


@dataclass(frozen=True)
class Pose:
    """SO(3) x R^3 element. Tangent layout: [rotation (body, right), translation]."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


Value = Union[Pose, np.ndarray]


def tangent_dim(value: Value) -> int:
    if isinstance(value, Pose):
        return 6
    return int(np.size(value))


def retract(value: Value, delta: np.ndarray) -> Value:
    if isinstance(value, Pose):
        return Pose(value.R @ so3_exp(delta[:3]), value.p + delta[3:6])
    return value + delta


def local(origin: Value, value: Value) -> np.ndarray:
    """Inverse of retract: retract(origin, local(origin, value)) == value."""
    if isinstance(origin, Pose):
        return np.concatenate([so3_log(origin.R.T @ value.R), value.p - origin.p])
    return np.asarray(value, dtype=float) - origin


@dataclass
class VariableBlock:
    key: VariableKey
    value: Value

    def __post_init__(self):
        if not isinstance(self.value, Pose):
            self.value = np.atleast_1d(np.asarray(self.value, dtype=float)).copy()

    @property
    def manifold_dim(self) -> int:
        return tangent_dim(self.value)
