"""Schur-complement marginalization and the fixed-lag smoother."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from .factors import Factor, MarginalPrior
from .solver import (
    FactorGraph,
    Ordering,
    SolverConfig,
    SolverReport,
    Values,
    linearize,
    marginal_covariance,
    optimize,
)
from .variables import VariableBlock, VariableKey

log = logging.getLogger(__name__)

REGULARIZATION = 1e-12


@dataclass
class MarginalizationResult:
    prior: Optional[MarginalPrior]
    prior_id: Optional[int]
    removed_keys: List[VariableKey]
    removed_factors: List[int]
    warnings: List[str] = field(default_factory=list)


def marginalize(graph: FactorGraph, values: Mapping[VariableKey, object],
                keys_to_remove: Sequence[VariableKey]) -> MarginalizationResult:
    """Eliminate `keys_to_remove`, replacing their factors by a dense prior
    on the separator linearized at `values` (never relinearized later)."""
    remove = [k for k in graph.variables if k in set(keys_to_remove)]
    unknown = set(keys_to_remove) - set(remove)
    if unknown:
        raise KeyError(f"cannot marginalize unknown variables: {', '.join(map(str, unknown))}")
    remove_set = set(remove)
    fids = [fid for fid, f in graph.factors.items() if remove_set.intersection(f.keys)]
    sep_set = {k for fid in fids for k in graph.factors[fid].keys} - remove_set
    separator = [k for k in graph.variables if k in sep_set]
    warnings: List[str] = []

    prior = None
    if fids:
        sub = {fid: graph.factors[fid] for fid in fids}
        ordering = Ordering.build(remove + separator, values)
        system = linearize(graph, values, factors=sub, ordering=ordering)
        J = system.J.toarray()
        H = J.T @ J
        g = J.T @ system.b
        m = sum(ordering.dims[k] for k in remove)
        Hmm, Hms, Hss = H[:m, :m], H[:m, m:], H[m:, m:]
        gm, gs = g[:m], g[m:]
        try:
            cf = sla.cho_factor(Hmm, lower=True)
        except np.linalg.LinAlgError:
            msg = f"singular information for marginalized block {', '.join(map(str, remove))}; regularized"
            log.warning(msg)
            warnings.append(msg)
            cf = sla.cho_factor(Hmm + REGULARIZATION * max(1.0, np.abs(Hmm).max()) * np.eye(m), lower=True)
        if separator:
            X = sla.cho_solve(cf, np.column_stack([Hms, gm]))
            H_s = Hss - Hms.T @ X[:, :-1]
            g_s = gs - Hms.T @ X[:, -1]
            H_s = 0.5 * (H_s + H_s.T)
            if np.abs(H_s).max(initial=0.0) > 0.0:
                prior = MarginalPrior(separator, [values[k] for k in separator], H_s, -g_s)

    for fid in fids:
        graph.remove_factor(fid)
    for k in remove:
        graph.remove_variable(k)
    prior_id = None
    if prior is not None and prior.rank > 0:
        prior_id = graph.add_factor(prior)
    return MarginalizationResult(prior, prior_id, remove, fids, warnings)


@dataclass
class SmootherUpdate:
    values: Values
    timing: float
    report: SolverReport
    marginalized: List[VariableKey] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


class FixedLagSmoother:
    """Windowed re-linearized batch solver with marginalization of epochs
    older than `newest - lag`. lag = inf keeps every state (batch mode)."""

    def __init__(self, lag: float = math.inf, solver: Optional[SolverConfig] = None):
        if not lag > 0:
            raise ValueError("lag must be positive")
        self.lag = float(lag)
        self.solver = solver or SolverConfig()
        self.graph = FactorGraph()
        self.values: Values = {}
        self.timestamps: Dict[int, float] = {}

    @property
    def newest_time(self) -> float:
        return max(self.timestamps.values()) if self.timestamps else -math.inf

    def update(self, new_variables: Sequence[VariableBlock], new_factors: Sequence[Factor],
               timestamps: Union[float, Mapping[int, float]], lag: Optional[float] = None) -> SmootherUpdate:
        lag = self.lag if lag is None else float(lag)
        if not isinstance(timestamps, Mapping):
            timestamps = {b.key.epoch: float(timestamps) for b in new_variables}
        newest = self.newest_time
        for epoch, t in timestamps.items():
            if epoch not in self.timestamps and t <= newest:
                raise ValueError(f"epoch {epoch} at t={t} is not after the newest state t={newest}")
        t0 = time.perf_counter()
        for b in new_variables:
            self.graph.add_variable(b)
            self.values[b.key] = b.value
        self.timestamps.update(timestamps)
        for f in new_factors:
            self.graph.add_factor(f)

        self.values, report = optimize(self.graph, self.values, self.solver)

        marginalized: List[VariableKey] = []
        warnings = list(report.warnings)
        if math.isfinite(lag):
            cutoff = max(self.timestamps.values()) - lag
            old = {e for e, t in self.timestamps.items() if t < cutoff}
            if old:
                keys = [k for k in self.graph.variables if k.epoch in old]
                res = marginalize(self.graph, self.values, keys)
                warnings += res.warnings
                marginalized = res.removed_keys
                for k in keys:
                    del self.values[k]
                for e in old:
                    del self.timestamps[e]
        elapsed = time.perf_counter() - t0
        report.warnings = warnings
        return SmootherUpdate(dict(self.values), elapsed, report, marginalized, warnings)

    def covariance(self, keys: Sequence[VariableKey]) -> np.ndarray:
        return marginal_covariance(self.graph, self.values, keys)


def fixed_lag_update(smoother: FixedLagSmoother, new_variables, new_factors, lag_duration: float,
                     timestamps) -> tuple[Values, float]:
    out = smoother.update(new_variables, new_factors, timestamps, lag=lag_duration)
    return out.values, out.timing
