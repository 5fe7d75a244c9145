"""Accuracy and availability metrics against ground truth, plus the lag sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .geo import GeodeticPosition, lla_to_ecef, ned_rotation

ASSOCIATION_TOL = 0.05  # s


class NoAlignedEpochs(ValueError):
    pass


@dataclass
class TruthTrack:
    """Ground-truth positions (ECEF) with geodetic coordinates for the local frame."""
    t: np.ndarray
    ecef: np.ndarray  # (N, 3)
    lla: np.ndarray  # (N, 3) lat rad, lon rad, h

    @classmethod
    def from_lla(cls, t, lat, lon, h) -> "TruthTrack":
        lla = np.column_stack([lat, lon, h]).astype(float)
        ecef = np.array([lla_to_ecef(GeodeticPosition(*row)) for row in lla]).reshape(-1, 3)
        return cls(np.asarray(t, dtype=float), ecef, lla)

    @classmethod
    def from_ground_truth(cls, truth) -> "TruthTrack":
        lla = np.array([tuple(truth.frame.to_lla(p)) for p in truth.position])
        return cls(np.asarray(truth.t, dtype=float), truth.ecef(), lla)


@dataclass
class AlignedErrorSeries:
    t: np.ndarray
    err2d: np.ndarray
    err3d: np.ndarray
    valid: np.ndarray
    opt_time: np.ndarray

    def __len__(self):
        return len(self.t)

    def select(self, keep: np.ndarray) -> "AlignedErrorSeries":
        keep = np.asarray(keep, dtype=bool)
        return AlignedErrorSeries(self.t[keep], self.err2d[keep], self.err3d[keep], self.valid[keep],
                                  self.opt_time[keep])


def associate(truth_t: np.ndarray, t: np.ndarray, tol: float = ASSOCIATION_TOL) -> np.ndarray:
    """Index of the nearest truth sample for each time, -1 when none lies within tol."""
    truth_t = np.asarray(truth_t, dtype=float)
    t = np.asarray(t, dtype=float)
    if truth_t.size == 0:
        return np.full(t.shape, -1, dtype=int)
    j = np.clip(np.searchsorted(truth_t, t), 1, max(truth_t.size - 1, 1))
    lo = np.clip(j - 1, 0, truth_t.size - 1)
    hi = np.clip(j, 0, truth_t.size - 1)
    pick = np.where(np.abs(truth_t[hi] - t) < np.abs(truth_t[lo] - t), hi, lo)
    return np.where(np.abs(truth_t[pick] - t) <= tol, pick, -1)


def align(truth: TruthTrack, t, ecef, valid, opt_time=None, tol: float = ASSOCIATION_TOL) -> AlignedErrorSeries:
    """Errors of a solution track at every solution epoch that has a truth sample nearby.

    Horizontal error uses the North/East components in the NED frame of the truth point.
    """
    t = np.asarray(t, dtype=float)
    ecef = np.asarray(ecef, dtype=float).reshape(-1, 3)
    valid = np.asarray(valid, dtype=bool)
    opt_time = np.full(t.shape, np.nan) if opt_time is None else np.asarray(opt_time, dtype=float)
    idx = associate(truth.t, t, tol)
    keep = idx >= 0
    if not keep.any():
        raise NoAlignedEpochs("no aligned epochs between truth and solution")
    idx = idx[keep]
    d = ecef[keep] - truth.ecef[idx]
    R = np.array([ned_rotation(GeodeticPosition(*row)) for row in truth.lla[idx]])
    d_ned = np.einsum("nji,nj->ni", R, d)
    v = valid[keep] & np.all(np.isfinite(d), axis=1)
    err2d = np.where(v, np.hypot(d_ned[:, 0], d_ned[:, 1]), np.nan)
    err3d = np.where(v, np.linalg.norm(d_ned, axis=1), np.nan)
    return AlignedErrorSeries(t[keep], err2d, err3d, v, opt_time[keep])


def interval_mask(t: np.ndarray, excluded: Sequence[tuple]) -> np.ndarray:
    """True for epochs outside every excluded [start, end] interval."""
    t = np.asarray(t, dtype=float)
    keep = np.ones(t.shape, dtype=bool)
    for a, b in excluded:
        keep &= ~((t >= a) & (t <= b))
    return keep


def common_epoch_mask(series: AlignedErrorSeries, other: AlignedErrorSeries,
                      tol: float = ASSOCIATION_TOL) -> np.ndarray:
    """True where both series hold a valid estimate at the same epoch."""
    j = associate(other.t, series.t, tol)
    ok = j >= 0
    out = np.zeros(len(series), dtype=bool)
    out[ok] = other.valid[j[ok]]
    return out & series.valid


def rmse(series: AlignedErrorSeries, dims: int = 2, mask: Optional[np.ndarray] = None) -> float:
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    sel = series.valid.copy()
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("no valid epochs in the evaluation mask")
    e = (series.err2d if dims == 2 else series.err3d)[sel]
    return float(np.sqrt(np.mean(e * e)))


def service_availability(series: AlignedErrorSeries, thresholds: Iterable[float]) -> np.ndarray:
    """Fraction of all epochs with a valid estimate whose 2D error is within each threshold."""
    n = len(series)
    if n == 0:
        raise ValueError("empty error series")
    e = np.where(series.valid, series.err2d, np.inf)
    return np.array([np.count_nonzero(series.valid & (e <= tau)) / n for tau in thresholds])


@dataclass
class LagSweepRow:
    lag: float
    rmse2d: float
    rmse3d: float
    mean_opt_time: float


def series_from_solutions(truth: TruthTrack, solutions) -> AlignedErrorSeries:
    from .estimator import SolutionStatus

    t = [s.state.timestamp for s in solutions]
    ecef = [s.ecef if s.ecef is not None else np.full(3, np.nan) for s in solutions]
    valid = [s.status == SolutionStatus.VALID for s in solutions]
    return align(truth, t, ecef, valid, [s.optimization_time for s in solutions])


def lag_sweep(imu, gnss, truth: TruthTrack, config, lags: Sequence[float]) -> List[LagSweepRow]:
    """Run the estimator once per lag with everything else fixed."""
    from .estimator.pipeline import run_dataset

    rows = []
    for lag in lags:
        sols, report = run_dataset(imu, gnss, replace(config, lag=float(lag)))
        s = series_from_solutions(truth, sols)
        rows.append(LagSweepRow(float(lag), rmse(s, 2), rmse(s, 3), report.mean_opt_time))
    return rows


def opt_time_trend_ok(times: Sequence[float], allowance: float = 0.10) -> bool:
    """Non-decreasing up to a relative noise allowance."""
    times = list(times)
    return all(b >= a * (1.0 - allowance) for a, b in zip(times, times[1:]))


def format_table(rows: Sequence[LagSweepRow]) -> str:
    lines = ["# lag_s rmse2d_m rmse3d_m mean_opt_time_s"]
    for r in rows:
        lag = "inf" if math.isinf(r.lag) else f"{r.lag:g}"
        lines.append(f"{lag} {r.rmse2d:.4f} {r.rmse3d:.4f} {r.mean_opt_time:.6f}")
    return "\n".join(lines) + "\n"
