"""Estimator factors: IMU preintegration, pseudorange and Doppler.

Navigation-frame states are mapped to ECEF inside the GNSS residuals with
the fixed NED anchor: x_e = origin + R_ne p, v_e = R_ne v.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..geo import LocalFrame, OMEGA_EARTH, SPEED_OF_LIGHT
from ..gnss import SatObservation, clock_index
from ..graph import Factor, HuberLoss, sqrt_info_from_covariance, sqrt_info_from_sigmas
from ..graph.variables import VariableKey
from ..preint import PreintegratedDelta, preintegrated_residual


class ImuFactor(Factor):
    """Preintegrated IMU constraint on (pose_i, vel_i, pose_j, vel_j, bias_i)."""

    def __init__(self, pose_i: VariableKey, vel_i: VariableKey, pose_j: VariableKey, vel_j: VariableKey,
                 bias_i: VariableKey, delta: PreintegratedDelta, gravity: np.ndarray):
        super().__init__((pose_i, vel_i, pose_j, vel_j, bias_i), sqrt_info_from_covariance(delta.covariance))
        self.delta = delta
        self.gravity = np.asarray(gravity, dtype=float)

    def _eval(self, values, jacobians):
        pi, vi, pj, vj, b = values
        return preintegrated_residual(self.delta, pi.R, pi.p, vi, pj.R, pj.p, vj, b, self.gravity, jacobians)

    def error(self, values):
        return self._eval(values, False)[0]

    def linearize(self, values):
        return self._eval(values, True)


def _sagnac_gradient(sat: np.ndarray) -> np.ndarray:
    g = np.zeros_like(sat)
    g[:, 0] = -sat[:, 1]
    g[:, 1] = sat[:, 0]
    return g * (OMEGA_EARTH / SPEED_OF_LIGHT)


class _GnssFactor(Factor):
    def __init__(self, keys, obs: SatObservation, sigma: float, clock_slot: int, n_clock: int,
                 frame: LocalFrame, loss: Optional[HuberLoss]):
        super().__init__(keys, sqrt_info_from_sigmas([sigma]), loss)
        self.obs = obs
        self.clock_slot = clock_slot
        self.n_clock = n_clock
        self.frame = frame

    def signature(self):
        return (type(self), self.n_clock, id(self.frame))

    @staticmethod
    def _clock_terms(factors, clock_values):
        C = np.asarray(clock_values, dtype=float)
        slots = np.array([f.clock_slot for f in factors])
        m = len(factors)
        value = C[:, 0] + np.where(slots > 0, C[np.arange(m), slots], 0.0)
        J = np.zeros((m, 1, C.shape[1]))
        J[:, 0, 0] = -1.0
        J[np.arange(m), 0, slots] += np.where(slots > 0, -1.0, 0.0)
        return value, J

    def error(self, values):
        return type(self).linearize_many([self], [values], jacobians=False)[0][0]

    def linearize(self, values):
        r, Js = type(self).linearize_many([self], [values])
        return r[0], [J[0] for J in Js]


class PseudorangeFactor(_GnssFactor):
    """r = rho - (|s - x_e| + Sagnac + clock + T + I) on (pose, clock_bias)."""

    def __init__(self, pose: VariableKey, clock: VariableKey, obs: SatObservation, sigma: float,
                 clock_slot: int, n_clock: int, frame: LocalFrame, loss: Optional[HuberLoss] = None):
        super().__init__((pose, clock), obs, sigma, clock_slot, n_clock, frame, loss)
        self.rho = obs.pseudorange - obs.tropo_delay - obs.iono_delay

    @classmethod
    def linearize_many(cls, factors, values, jacobians=True):
        frame = factors[0].frame
        R_ne, o = frame.R_ne, frame.origin_ecef
        p = np.array([v[0].p for v in values])
        x = o + p @ R_ne.T
        sat = np.array([f.obs.sat_pos for f in factors])
        d = sat - x
        rng = np.linalg.norm(d, axis=1)
        sagnac = OMEGA_EARTH * (sat[:, 0] * x[:, 1] - sat[:, 1] * x[:, 0]) / SPEED_OF_LIGHT
        clk, Jc = cls._clock_terms(factors, [v[1] for v in values])
        rho = np.array([f.rho for f in factors])
        r = (rho - (rng + sagnac + clk))[:, None]
        if not jacobians:
            return r, None
        d_ecef = d / rng[:, None] - _sagnac_gradient(sat)
        Jp = np.zeros((len(factors), 1, 6))
        Jp[:, 0, 3:] = d_ecef @ R_ne
        return r, [Jp, Jc]


class DopplerFactor(_GnssFactor):
    """r = rate - (-u.v_e + drift) on (velocity, clock_drift)."""

    def __init__(self, vel: VariableKey, drift: VariableKey, obs: SatObservation, sigma: float,
                 clock_slot: int, n_clock: int, frame: LocalFrame, loss: Optional[HuberLoss] = None):
        super().__init__((vel, drift), obs, sigma, clock_slot, n_clock, frame, loss)
        self.u_nav = frame.R_ne.T @ obs.los

    @classmethod
    def linearize_many(cls, factors, values, jacobians=True):
        v = np.array([val[0] for val in values])
        U = np.array([f.u_nav for f in factors])
        drift, Jd = cls._clock_terms(factors, [val[1] for val in values])
        rate = np.array([f.obs.pseudorange_rate for f in factors])
        r = (rate - (-np.einsum("ij,ij->i", U, v) + drift))[:, None]
        if not jacobians:
            return r, None
        return r, [U[:, None, :], Jd]


def clock_slot(constellations, obs: SatObservation) -> int:
    return clock_index(constellations, obs.constellation)
