"""State, configuration and output types of the tightly coupled estimator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..gnss import ClockState, Constellation
from ..graph import SolverConfig
from ..preint import ImuNoiseParams


@dataclass
class NavState:
    timestamp: float
    position: np.ndarray  # navigation frame (NED), m
    velocity: np.ndarray  # navigation frame, m/s
    attitude: np.ndarray  # body to navigation
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock: ClockState = field(default_factory=ClockState)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.attitude = np.asarray(self.attitude, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)

    @property
    def imu_bias(self) -> np.ndarray:
        return np.concatenate([self.accel_bias, self.gyro_bias])

    def is_finite(self) -> bool:
        arrs = (self.position, self.velocity, self.attitude, self.accel_bias, self.gyro_bias)
        clk = [self.clock.gps_bias, self.clock.gps_drift, *self.clock.inter_system_offsets.values(),
               *self.clock.inter_system_drifts.values()]
        return all(np.all(np.isfinite(a)) for a in arrs) and all(math.isfinite(c) for c in clk)


class SolutionStatus(str, enum.Enum):
    VALID = "Valid"
    UNAVAILABLE = "Unavailable"
    DIVERGED = "Diverged"


@dataclass
class EpochSolution:
    state: NavState
    status: SolutionStatus
    num_sats_used: Dict[Constellation, int] = field(default_factory=dict)
    optimization_time: float = math.nan
    position_covariance: Optional[np.ndarray] = None
    ecef: Optional[np.ndarray] = None  # position in ECEF, filled by the pipeline

    @property
    def total_sats(self) -> int:
        return int(sum(self.num_sats_used.values()))


@dataclass
class PriorSigmas:
    position: float = 10.0  # m
    velocity: float = 1.0  # m/s
    roll_pitch: float = math.radians(2.0)
    yaw: float = math.radians(10.0)  # replaced by pi when heading is unobservable at start
    accel_bias: float = 0.1  # m/s^2
    gyro_bias: float = 0.01  # rad/s
    clock_bias: float = 30.0  # m
    clock_drift: float = 1.0  # m/s
    inter_system_offset: float = 100.0  # m
    inter_system_drift: float = 1.0  # m/s


@dataclass
class EstimatorConfig:
    lag: float = 30.0  # s; math.inf for batch mode
    prior: PriorSigmas = field(default_factory=PriorSigmas)
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    clock_bias_rw: float = 5.0  # m/sqrt(s)
    clock_drift_rw: float = 0.5  # m/s/sqrt(s)
    pr_sigma0: float = 2.0  # m at zenith
    rate_sigma0: float = 0.05  # m/s at zenith
    cn0_ref: Optional[float] = None  # dB-Hz; C/N0 down-weighting below it
    elevation_mask: float = math.radians(10.0)
    constellations: Tuple[Constellation, ...] = (Constellation.GPS,)
    use_doppler: bool = True
    robust: bool = False
    huber_k: float = 1.345
    solver: SolverConfig = field(default_factory=SolverConfig)
    init_window: float = 1.0  # s of IMU used for leveling
    init_max_epochs: int = 30
    yaw_min_speed: float = 2.0  # m/s
    divergence_cost: float = 1e12
    record_timing: bool = False  # write measured times to the solution file
    compute_covariance: bool = False  # marginal position covariance per epoch

    def __post_init__(self):
        self.constellations = tuple(Constellation(c) for c in self.constellations)
        if Constellation.GPS not in self.constellations:
            raise ValueError("GPS must be enabled; it is the clock reference")
        if not self.lag > 0:
            raise ValueError("lag must be positive")
        sigmas = [self.clock_bias_rw, self.clock_drift_rw, self.pr_sigma0, self.rate_sigma0,
                  *vars(self.prior).values()]
        if not all(s > 0 for s in sigmas):
            raise ValueError("all sigmas must be positive")
