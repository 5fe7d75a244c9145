"""Tightly coupled GNSS/IMU estimator on the fixed-lag factor graph."""

from .types import EpochSolution, EstimatorConfig, NavState, PriorSigmas, SolutionStatus
