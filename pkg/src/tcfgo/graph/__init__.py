"""Sparse nonlinear least squares over manifold variables, marginalization
and fixed-lag smoothing."""

from .factors import (
    BetweenFactor,
    Factor,
    HuberLoss,
    MarginalPrior,
    PriorFactor,
    RandomWalkFactor,
    numerical_jacobians,
    sqrt_info_from_covariance,
    sqrt_info_from_sigmas,
)
from .smoother import FixedLagSmoother, MarginalizationResult, SmootherUpdate, fixed_lag_update, marginalize
from .solver import (
    FactorGraph,
    LinearSystem,
    Method,
    NonFiniteError,
    SolverConfig,
    SolverError,
    SolverReport,
    factor_costs,
    linearize,
    marginal_covariance,
    optimize,
    total_cost,
)
from .variables import B, C, D, P, Pose, V, VariableBlock, VariableKey, VariableKind, local, retract, tangent_dim

__all__ = [name for name in dir() if not name.startswith("_")]
