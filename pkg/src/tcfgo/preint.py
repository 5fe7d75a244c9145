"""IMU preintegration between GNSS epochs.

Deltas are accumulated in the body frame of the first epoch, without gravity
and without Earth-rotation terms. Each step averages the measurements at both
ends of the interval and applies the midpoint rule: the specific force is
rotated by the attitude at the half step, and the attitude advances by an
exact SO(3) exponential.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geo import right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log

log = logging.getLogger(__name__)

BIAS_WARN_THRESHOLD = 0.1


class PreintegrationError(ValueError):
    pass


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    specific_force: np.ndarray  # body frame, m/s^2
    angular_rate: np.ndarray  # body frame, rad/s

    def __post_init__(self):
        object.__setattr__(self, "specific_force", np.asarray(self.specific_force, dtype=float))
        object.__setattr__(self, "angular_rate", np.asarray(self.angular_rate, dtype=float))


def interpolate_sample(s0: ImuSample, s1: ImuSample, t: float) -> ImuSample:
    if not s0.timestamp <= t <= s1.timestamp:
        raise PreintegrationError(f"t={t} outside [{s0.timestamp}, {s1.timestamp}]")
    if s1.timestamp == s0.timestamp:
        return ImuSample(t, s1.specific_force, s1.angular_rate)
    a = (t - s0.timestamp) / (s1.timestamp - s0.timestamp)
    return ImuSample(t, (1 - a) * s0.specific_force + a * s1.specific_force,
                     (1 - a) * s0.angular_rate + a * s1.angular_rate)


@dataclass(frozen=True)
class ImuNoiseParams:
    accel_noise_density: float = 2e-3  # m/s^2/sqrt(Hz)
    gyro_noise_density: float = 2e-4  # rad/s/sqrt(Hz)
    accel_bias_rw: float = 1e-4  # m/s^2/sqrt(s)
    gyro_bias_rw: float = 1e-5  # rad/s/sqrt(s)
    integration_sigma: float = 1e-4

    def __post_init__(self):
        for name in ("accel_noise_density", "gyro_noise_density", "accel_bias_rw", "gyro_bias_rw",
                     "integration_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def bias_random_walk_covariance(noise: ImuNoiseParams, dt: float) -> np.ndarray:
    """Covariance of b_{k+1} - b_k over dt, layout [accel, gyro]."""
    return np.diag([noise.accel_bias_rw**2 * dt] * 3 + [noise.gyro_bias_rw**2 * dt] * 3)


@dataclass
class PreintegratedDelta:
    """Accumulated motion; covariance and Jacobians are ordered (dtheta, dv, dp)
    by (b_a, b_g)."""

    bias_lin_point: np.ndarray = field(default_factory=lambda: np.zeros(6))
    delta_R: np.ndarray = field(default_factory=lambda: np.eye(3))
    delta_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_t: float = 0.0
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    bias_jacobians: np.ndarray = field(default_factory=lambda: np.zeros((9, 6)))
    last_accel: Optional[np.ndarray] = None
    last_gyro: Optional[np.ndarray] = None
    num_samples: int = 0

    def __post_init__(self):
        self.bias_lin_point = np.asarray(self.bias_lin_point, dtype=float).reshape(6)

    @classmethod
    def start(cls, bias: np.ndarray, boundary: Optional[ImuSample] = None) -> "PreintegratedDelta":
        d = cls(bias_lin_point=np.array(bias, dtype=float))
        if boundary is not None:
            d.last_accel, d.last_gyro = boundary.specific_force.copy(), boundary.angular_rate.copy()
        return d

    def copy(self) -> "PreintegratedDelta":
        return replace(
            self,
            bias_lin_point=self.bias_lin_point.copy(),
            delta_R=self.delta_R.copy(),
            delta_v=self.delta_v.copy(),
            delta_p=self.delta_p.copy(),
            covariance=self.covariance.copy(),
            bias_jacobians=self.bias_jacobians.copy(),
        )

    def integrate(self, sample: ImuSample, dt: float, noise: ImuNoiseParams) -> "PreintegratedDelta":
        """Advance in place by dt, ending at `sample`. Returns self."""
        if not (dt > 0 and math.isfinite(dt)):
            raise PreintegrationError(f"dt must be positive, got {dt}")
        if not (np.all(np.isfinite(sample.specific_force)) and np.all(np.isfinite(sample.angular_rate))):
            raise PreintegrationError(f"non-finite IMU sample at t={sample.timestamp}")
        ba, bg = self.bias_lin_point[:3], self.bias_lin_point[3:]
        acc0 = sample.specific_force if self.last_accel is None else self.last_accel
        gyr0 = sample.angular_rate if self.last_gyro is None else self.last_gyro
        a = 0.5 * (acc0 + sample.specific_force) - ba
        w = 0.5 * (gyr0 + sample.angular_rate) - bg

        half = w * (0.5 * dt)
        dR_half = so3_exp(half)
        Jr_half = right_jacobian(half)
        dR = dR_half @ dR_half
        Jr = right_jacobian(w * dt)
        R0 = self.delta_R
        Rh = R0 @ dR_half
        a_nav = Rh @ a
        Rh_ax = Rh @ skew(a)

        # bias Jacobians, exact for this discrete scheme
        J = self.bias_jacobians
        JR0 = J[0:3, 3:6]
        JRh = dR_half.T @ JR0 - Jr_half * (0.5 * dt)
        da_dbg = -Rh_ax @ JRh
        Jn = np.empty((9, 6))
        Jn[0:3, 0:3] = 0.0
        Jn[0:3, 3:6] = dR.T @ JR0 - Jr * dt
        Jn[3:6, 0:3] = J[3:6, 0:3] - Rh * dt
        Jn[3:6, 3:6] = J[3:6, 3:6] + da_dbg * dt
        Jn[6:9, 0:3] = J[6:9, 0:3] + J[3:6, 0:3] * dt - 0.5 * Rh * dt * dt
        Jn[6:9, 3:6] = J[6:9, 3:6] + J[3:6, 3:6] * dt + 0.5 * da_dbg * dt * dt

        # error-state propagation, state (theta, v, p), noise (n_gyro, n_accel)
        A = np.eye(9)
        A[0:3, 0:3] = dR.T
        dA_dth = -Rh_ax @ dR_half.T
        A[3:6, 0:3] = dA_dth * dt
        A[6:9, 0:3] = 0.5 * dA_dth * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        Bn = np.zeros((9, 6))
        Bn[0:3, 0:3] = Jr * dt
        dA_dng = -Rh_ax @ Jr_half * (0.5 * dt)
        Bn[3:6, 0:3] = dA_dng * dt
        Bn[6:9, 0:3] = 0.5 * dA_dng * dt * dt
        Bn[3:6, 3:6] = Rh * dt
        Bn[6:9, 3:6] = 0.5 * Rh * dt * dt
        q = np.array([noise.gyro_noise_density**2 / dt] * 3 + [noise.accel_noise_density**2 / dt] * 3)
        cov = A @ self.covariance @ A.T + (Bn * q) @ Bn.T
        cov[6:9, 6:9] += np.eye(3) * noise.integration_sigma**2 * dt
        self.covariance = 0.5 * (cov + cov.T)

        self.delta_p = self.delta_p + self.delta_v * dt + 0.5 * a_nav * dt * dt
        self.delta_v = self.delta_v + a_nav * dt
        self.delta_R = R0 @ dR
        self.bias_jacobians = Jn
        self.delta_t += dt
        self.last_accel, self.last_gyro = sample.specific_force, sample.angular_rate
        self.num_samples += 1
        return self


def integrate_sample(delta: PreintegratedDelta, sample: ImuSample, dt: float,
                     noise: ImuNoiseParams) -> PreintegratedDelta:
    return delta.copy().integrate(sample, dt, noise)


def integrate_stream(samples, bias=np.zeros(6), noise: Optional[ImuNoiseParams] = None) -> PreintegratedDelta:
    """Preintegrate consecutive samples; the first one only seeds the start."""
    noise = noise or ImuNoiseParams()
    samples = list(samples)
    if not samples:
        return PreintegratedDelta.start(bias)
    d = PreintegratedDelta.start(bias, samples[0])
    for prev, s in zip(samples, samples[1:]):
        d.integrate(s, s.timestamp - prev.timestamp, noise)
    return d


def bias_corrected_delta(delta: PreintegratedDelta, new_bias: np.ndarray):
    db = np.asarray(new_bias, dtype=float) - delta.bias_lin_point
    if np.abs(db).max(initial=0.0) > BIAS_WARN_THRESHOLD:
        log.warning("bias update %.3g exceeds first-order validity range", np.abs(db).max())
    J = delta.bias_jacobians
    R = delta.delta_R @ so3_exp(J[0:3, 3:6] @ db[3:])
    v = delta.delta_v + J[3:6] @ db
    p = delta.delta_p + J[6:9] @ db
    return R, v, p


def predict(delta: PreintegratedDelta, R_i, p_i, v_i, bias, gravity):
    """Propagate (R, p, v) across the delta with bias correction."""
    dR, dv, dp = bias_corrected_delta(delta, bias)
    dt = delta.delta_t
    R_j = R_i @ dR
    v_j = v_i + gravity * dt + R_i @ dv
    p_j = p_i + v_i * dt + 0.5 * gravity * dt * dt + R_i @ dp
    return R_j, p_j, v_j


def preintegrated_residual(delta: PreintegratedDelta, R_i, p_i, v_i, R_j, p_j, v_j, bias, gravity,
                           jacobians: bool = True):
    """9-vector residual (theta, v, p) and Jacobians w.r.t.
    pose_i (6), vel_i (3), pose_j (6), vel_j (3), bias_i (6).

    Pose tangent is [body rotation, nav translation].
    """
    dt = delta.delta_t
    db = np.asarray(bias, dtype=float) - delta.bias_lin_point
    J = delta.bias_jacobians
    phi = J[0:3, 3:6] @ db[3:]
    dR = delta.delta_R @ so3_exp(phi)
    dv = delta.delta_v + J[3:6] @ db
    dp = delta.delta_p + J[6:9] @ db

    RiT = R_i.T
    wv = v_j - v_i - gravity * dt
    wp = p_j - p_i - v_i * dt - 0.5 * gravity * dt * dt
    E = dR.T @ RiT @ R_j
    r_th = so3_log(E)
    r_v = RiT @ wv - dv
    r_p = RiT @ wp - dp
    r = np.concatenate([r_th, r_v, r_p])
    if not jacobians:
        return r, None

    Jri = right_jacobian_inv(r_th)
    J_pi = np.zeros((9, 6))
    J_vi = np.zeros((9, 3))
    J_pj = np.zeros((9, 6))
    J_vj = np.zeros((9, 3))
    J_b = np.zeros((9, 6))

    J_pi[0:3, 0:3] = -Jri @ R_j.T @ R_i
    J_pi[3:6, 0:3] = skew(RiT @ wv)
    J_pi[6:9, 0:3] = skew(RiT @ wp)
    J_pi[6:9, 3:6] = -RiT
    J_vi[3:6] = -RiT
    J_vi[6:9] = -RiT * dt
    J_pj[0:3, 0:3] = Jri
    J_pj[6:9, 3:6] = RiT
    J_vj[3:6] = RiT
    J_b[0:3, 3:6] = -Jri @ E.T @ right_jacobian(phi) @ J[0:3, 3:6]
    J_b[3:6] = -J[3:6]
    J_b[6:9] = -J[6:9]
    return r, [J_pi, J_vi, J_pj, J_vj, J_b]


def imu_residual(delta: PreintegratedDelta, state_i, state_j, gravity, tol: float = 1e-6):
    """Residual between two navigation states (objects exposing timestamp,
    attitude, position, velocity, accel_bias, gyro_bias)."""
    span = state_j.timestamp - state_i.timestamp
    if abs(span - delta.delta_t) > tol:
        raise PreintegrationError(f"state interval {span} s does not match delta_t {delta.delta_t} s")
    bias = np.concatenate([state_i.accel_bias, state_i.gyro_bias])
    return preintegrated_residual(delta, state_i.attitude, state_i.position, state_i.velocity,
                                  state_j.attitude, state_j.position, state_j.velocity, bias, gravity)
