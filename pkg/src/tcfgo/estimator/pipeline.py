"""Causal tightly coupled GNSS/IMU pipeline.

One set of state blocks per GNSS epoch; IMU samples between epochs are
preintegrated. Each epoch adds IMU, random-walk, pseudorange and Doppler
factors and runs one fixed-lag smoother update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..geo import LocalFrame, ecef_to_lla, euler_to_rotation, gravity_ned
from ..gnss import (
    ClockState,
    Constellation,
    GnssEpoch,
    apply_corrections,
    measurement_sigma,
    spp_solve,
)
from ..graph import (
    B,
    C,
    D,
    FixedLagSmoother,
    HuberLoss,
    NonFiniteError,
    P,
    Pose,
    PriorFactor,
    RandomWalkFactor,
    SolverError,
    V,
    VariableBlock,
    sqrt_info_from_covariance,
    sqrt_info_from_sigmas,
)
from ..preint import (
    ImuSample,
    PreintegratedDelta,
    bias_random_walk_covariance,
    predict,
)
from .factors import DopplerFactor, ImuFactor, PseudorangeFactor, clock_slot
from .types import EpochSolution, EstimatorConfig, NavState, SolutionStatus

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


def _nan_state(t: float) -> NavState:
    nan3 = np.full(3, np.nan)
    return NavState(t, nan3, nan3.copy(), np.full((3, 3), np.nan), nan3.copy(), nan3.copy(),
                    ClockState(math.nan, math.nan))


def leveling(samples: Sequence[ImuSample]) -> tuple[float, float]:
    """Roll and pitch from the mean specific force (gravity reaction)."""
    f = np.mean([s.specific_force for s in samples], axis=0)
    roll = math.atan2(-f[1], -f[2])
    pitch = math.atan2(f[0], math.hypot(f[1], f[2]))
    return roll, pitch


@dataclass
class RunReport:
    initialized: bool = False
    error: str = ""
    epochs: int = 0
    valid: int = 0
    diverged: int = 0
    recoveries: int = 0
    mean_opt_time: float = math.nan
    p95_opt_time: float = math.nan
    max_opt_time: float = math.nan
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(vars(self))


class TightlyCoupledEstimator:
    def __init__(self, config: Optional[EstimatorConfig] = None):
        self.config = config or EstimatorConfig()
        c = self.config
        self.constellations: List[Constellation] = list(c.constellations)
        self.n_clock = len(self.constellations)
        self.smoother = FixedLagSmoother(lag=c.lag, solver=c.solver)
        self.frame: Optional[LocalFrame] = None
        self.gravity: Optional[np.ndarray] = None
        self.loss = HuberLoss(c.huber_k) if c.robust else None
        self.k = -1  # index of the newest state
        self.t_k = -math.inf
        self.last_valid: Optional[NavState] = None
        self.delta: Optional[PreintegratedDelta] = None
        self.imu_buffer: List[ImuSample] = []
        self.last_sample: Optional[ImuSample] = None
        self.prev_sample: Optional[ImuSample] = None
        self.epochs_seen = 0
        self.needs_reanchor = False
        self.recoveries = 0
        self.warnings: List[str] = []

    @property
    def initialized(self) -> bool:
        return self.frame is not None

    # -- IMU ---------------------------------------------------------------

    def process_imu(self, sample: ImuSample) -> None:
        if self.last_sample is not None and sample.timestamp <= self.last_sample.timestamp:
            raise ValueError(f"IMU sample at t={sample.timestamp} is not after t={self.last_sample.timestamp}")
        if self.delta is not None and sample.timestamp > self.t_k:
            if self.delta.num_samples == 0 and self.delta.last_accel is None:
                self.delta.last_accel, self.delta.last_gyro = sample.specific_force, sample.angular_rate
            start = max(self.t_k, self.last_sample.timestamp if self.last_sample else self.t_k)
            self.delta.integrate(sample, sample.timestamp - start, self.config.imu_noise)
        else:
            horizon = sample.timestamp - self.config.init_window - 1.0
            self.imu_buffer = [s for s in self.imu_buffer if s.timestamp >= horizon]
            self.imu_buffer.append(sample)
        self.prev_sample, self.last_sample = self.last_sample, sample

    def _boundary_sample(self, t: float) -> Optional[ImuSample]:
        """Measurement at the epoch time, from the latest samples (causal)."""
        s1, s0 = self.last_sample, self.prev_sample
        if s1 is None:
            return None
        if s1.timestamp == t or s0 is None:
            return ImuSample(t, s1.specific_force, s1.angular_rate)
        a = (t - s1.timestamp) / (s1.timestamp - s0.timestamp)
        a = min(a, 1.0)  # extrapolate at most one sample period
        return ImuSample(t, s1.specific_force + a * (s1.specific_force - s0.specific_force),
                         s1.angular_rate + a * (s1.angular_rate - s0.angular_rate))

    def _close_delta(self, t: float) -> PreintegratedDelta:
        d = self.delta
        last_t = self.last_sample.timestamp if self.last_sample is not None else -math.inf
        if last_t < t:
            bnd = self._boundary_sample(t)
            if bnd is not None:
                if d.last_accel is None:
                    d.last_accel, d.last_gyro = bnd.specific_force, bnd.angular_rate
                d.integrate(bnd, t - max(last_t, self.t_k), self.config.imu_noise)
        return d

    # -- GNSS --------------------------------------------------------------

    def process_gnss_epoch(self, epoch: GnssEpoch) -> EpochSolution:
        t = epoch.timestamp
        if t <= self.t_k:
            raise ValueError(f"GNSS epoch t={t} is not after the previous epoch t={self.t_k}")
        self.epochs_seen += 1
        if not self.initialized:
            return self._try_initialize(epoch)
        if self.needs_reanchor:
            return self._reanchor(epoch)
        return self._update(epoch)

    def _spp(self, epoch: GnssEpoch, init=None):
        c = self.config
        usable = GnssEpoch(epoch.timestamp, [o for o in epoch.observations if o.constellation in c.constellations])
        return spp_solve(usable, init, c.pr_sigma0, c.rate_sigma0, c.elevation_mask, c.cn0_ref)

    def _try_initialize(self, epoch: GnssEpoch) -> EpochSolution:
        c = self.config
        t = epoch.timestamp
        sol = self._spp(epoch)
        have_imu = (self.imu_buffer and self.imu_buffer[0].timestamp <= t - c.init_window
                    and self.last_sample is not None and self.last_sample.timestamp >= t - 0.05)
        if not (sol.available and sol.velocity_available and have_imu):
            if self.epochs_seen >= c.init_max_epochs:
                why = sol.reason if not sol.available else "not enough IMU data before the fix"
                raise InitializationError(f"no initialization within {c.init_max_epochs} epochs ({why})")
            self.t_k = t
            return EpochSolution(_nan_state(t), SolutionStatus.UNAVAILABLE)

        self.frame = LocalFrame(ecef_to_lla(sol.position))
        self.gravity = gravity_ned(self.frame.origin)
        window = [s for s in self.imu_buffer if t - c.init_window <= s.timestamp <= t]
        roll, pitch = leveling(window)
        v_nav = self.frame.R_ne.T @ sol.velocity
        speed = math.hypot(v_nav[0], v_nav[1])
        if speed > c.yaw_min_speed:
            yaw, yaw_sigma = math.atan2(v_nav[1], v_nav[0]), c.prior.yaw
        else:
            yaw, yaw_sigma = 0.0, math.pi
        clock = self._clock_from_spp(sol.clock)
        state = NavState(t, np.zeros(3), v_nav, euler_to_rotation(roll, pitch, yaw), np.zeros(3), np.zeros(3), clock)
        self.yaw_sigma0 = yaw_sigma
        return self._start_graph(epoch, state, yaw_sigma)

    def _clock_from_spp(self, clock: ClockState) -> ClockState:
        offs = {c: clock.inter_system_offsets.get(c, 0.0) for c in self.constellations[1:]}
        drs = {c: clock.inter_system_drifts.get(c, 0.0) for c in self.constellations[1:]}
        return ClockState(clock.gps_bias, clock.gps_drift, offs, drs)

    def _prior_factors(self, k: int, state: NavState, yaw_sigma: float, pose_sigmas=None):
        pr = self.config.prior
        clk_b, clk_d = state.clock.to_vectors(self.constellations)
        pose_s = pose_sigmas if pose_sigmas is not None else [pr.roll_pitch, pr.roll_pitch, yaw_sigma] + [pr.position] * 3
        n_other = self.n_clock - 1
        return [
            PriorFactor(P(k), Pose(state.attitude, state.position), sqrt_info_from_sigmas(pose_s)),
            PriorFactor(V(k), state.velocity, sqrt_info_from_sigmas([pr.velocity] * 3)),
            PriorFactor(B(k), state.imu_bias, sqrt_info_from_sigmas([pr.accel_bias] * 3 + [pr.gyro_bias] * 3)),
            PriorFactor(C(k), clk_b, sqrt_info_from_sigmas([pr.clock_bias] + [pr.inter_system_offset] * n_other)),
            PriorFactor(D(k), clk_d, sqrt_info_from_sigmas([pr.clock_drift] + [pr.inter_system_drift] * n_other)),
        ]

    def _blocks(self, k: int, state: NavState) -> List[VariableBlock]:
        clk_b, clk_d = state.clock.to_vectors(self.constellations)
        return [VariableBlock(P(k), Pose(state.attitude, state.position)), VariableBlock(V(k), state.velocity),
                VariableBlock(B(k), state.imu_bias), VariableBlock(C(k), clk_b), VariableBlock(D(k), clk_d)]

    def _start_graph(self, epoch: GnssEpoch, state: NavState, yaw_sigma: float, pose_sigmas=None) -> EpochSolution:
        k = self.k + 1
        factors = self._prior_factors(k, state, yaw_sigma, pose_sigmas)
        gnss, used = self._gnss_factors(k, epoch, state)
        return self._solve(k, epoch.timestamp, self._blocks(k, state), factors + gnss, used)

    def _gnss_factors(self, k: int, epoch: GnssEpoch, predicted: NavState):
        c = self.config
        rx = self.frame.to_ecef(predicted.position)
        factors, used = [], {}
        for raw in epoch.observations:
            if raw.constellation not in c.constellations:
                continue
            try:
                obs = apply_corrections(raw, rx)
            except ValueError as e:
                self._warn(f"t={epoch.timestamp}: {e}")
                continue
            if obs.elevation < c.elevation_mask:
                continue
            slot = clock_slot(self.constellations, obs)
            s_pr = float(measurement_sigma(c.pr_sigma0, obs.elevation, obs.cn0, c.cn0_ref))
            factors.append(PseudorangeFactor(P(k), C(k), obs, s_pr, slot, self.n_clock, self.frame, self.loss))
            if c.use_doppler:
                s_d = float(measurement_sigma(c.rate_sigma0, obs.elevation, obs.cn0, c.cn0_ref))
                factors.append(DopplerFactor(V(k), D(k), obs, s_d, slot, self.n_clock, self.frame, self.loss))
            used[obs.constellation] = used.get(obs.constellation, 0) + 1
        return factors, used

    def _update(self, epoch: GnssEpoch) -> EpochSolution:
        c = self.config
        t = epoch.timestamp
        i, j = self.k, self.k + 1
        delta = self._close_delta(t)
        dt = t - self.t_k
        if abs(delta.delta_t - dt) > 1e-6:
            raise RuntimeError(f"IMU coverage {delta.delta_t:.6f} s does not match epoch interval {dt:.6f} s")
        prev = self.current_state()
        Rj, pj, vj = predict(delta, prev.attitude, prev.position, prev.velocity, prev.imu_bias, self.gravity)
        pred = NavState(t, pj, vj, Rj, prev.accel_bias, prev.gyro_bias, prev.clock)

        rw_clock = np.full(self.n_clock, c.clock_bias_rw**2 * dt)
        rw_drift = np.full(self.n_clock, c.clock_drift_rw**2 * dt)
        factors = [
            ImuFactor(P(i), V(i), P(j), V(j), B(i), delta, self.gravity),
            RandomWalkFactor(B(i), B(j), sqrt_info_from_covariance(bias_random_walk_covariance(c.imu_noise, dt))),
            RandomWalkFactor(C(i), C(j), sqrt_info_from_sigmas(np.sqrt(rw_clock))),
            RandomWalkFactor(D(i), D(j), sqrt_info_from_sigmas(np.sqrt(rw_drift))),
        ]
        gnss, used = self._gnss_factors(j, epoch, pred)
        return self._solve(j, t, self._blocks(j, pred), factors + gnss, used)

    def _solve(self, k: int, t: float, blocks, factors, used) -> EpochSolution:
        c = self.config
        try:
            out = self.smoother.update(blocks, factors, {k: t})
            diverged = not math.isfinite(out.report.final_cost) or out.report.final_cost > c.divergence_cost
            for w in out.warnings:
                self._warn(f"t={t}: {w}")
        except (SolverError, NonFiniteError) as e:
            self._warn(f"t={t}: solver failure: {e}")
            out, diverged = None, True
        self.k, self.t_k = k, t
        self.delta = PreintegratedDelta.start(np.zeros(6), self._boundary_sample(t))
        if not diverged:
            state = self.current_state()
            if not state.is_finite():
                diverged = True
        if diverged:
            return self._diverged(t)
        self.delta.bias_lin_point = state.imu_bias.copy()
        self.last_valid = state
        cov = self.smoother.covariance([P(k)])[3:, 3:] if c.compute_covariance else None
        return EpochSolution(state, SolutionStatus.VALID, dict(used), out.timing, cov,
                             self.frame.to_ecef(state.position))

    def current_state(self) -> NavState:
        vals = self.smoother.values
        k = self.k
        pose = vals[P(k)]
        clock = ClockState.from_vectors(self.constellations, vals[C(k)], vals[D(k)])
        b = vals[B(k)]
        return NavState(self.t_k, pose.p.copy(), np.array(vals[V(k)]), pose.R.copy(), b[:3].copy(), b[3:].copy(), clock)

    def _diverged(self, t: float) -> EpochSolution:
        """Freeze at the last valid state; the next SPP fix re-anchors."""
        self._warn(f"t={t}: solution diverged; waiting for an SPP fix to re-anchor")
        self.smoother = FixedLagSmoother(lag=self.config.lag, solver=self.config.solver)
        self.needs_reanchor = True
        frozen = self.last_valid or _nan_state(t)
        return EpochSolution(frozen, SolutionStatus.DIVERGED)

    def _reanchor(self, epoch: GnssEpoch) -> EpochSolution:
        t = epoch.timestamp
        sol = self._spp(epoch, init=self.frame.to_ecef(self.last_valid.position) if self.last_valid else None)
        if not (sol.available and sol.velocity_available):
            self.t_k = t
            frozen = self.last_valid or _nan_state(t)
            return EpochSolution(frozen, SolutionStatus.DIVERGED)
        self.needs_reanchor = False
        self.recoveries += 1
        last = self.last_valid
        attitude = last.attitude if last is not None else np.eye(3)
        state = NavState(t, self.frame.from_ecef(sol.position), self.frame.R_ne.T @ sol.velocity, attitude,
                         last.accel_bias if last else np.zeros(3), last.gyro_bias if last else np.zeros(3),
                         self._clock_from_spp(sol.clock))
        pr = self.config.prior
        return self._start_graph(epoch, state, pr.yaw, [pr.roll_pitch, pr.roll_pitch, pr.yaw] + [pr.position] * 3)

    def _warn(self, msg: str):
        log.warning(msg)
        self.warnings.append(msg)


def run_dataset(imu_stream: Iterable[ImuSample], gnss_stream: Iterable[GnssEpoch],
                config: Optional[EstimatorConfig] = None):
    """Feed both time-sorted streams in timestamp order (IMU first on ties)
    and collect per-epoch solutions plus a run report."""
    est = TightlyCoupledEstimator(config)
    imu = list(imu_stream)
    gnss = list(gnss_stream)
    report = RunReport()
    solutions: List[EpochSolution] = []
    i = 0
    try:
        if not gnss:
            raise InitializationError("empty GNSS stream")
        for epoch in gnss:
            while i < len(imu) and imu[i].timestamp <= epoch.timestamp:
                est.process_imu(imu[i])
                i += 1
            solutions.append(est.process_gnss_epoch(epoch))
        report.initialized = est.initialized
    except InitializationError as e:
        report.error = str(e)
        log.error("initialization failed: %s", e)
    report.initialized = est.initialized
    times = np.array([s.optimization_time for s in solutions if s.status == SolutionStatus.VALID])
    times = times[np.isfinite(times)]
    report.epochs = len(solutions)
    report.valid = sum(s.status == SolutionStatus.VALID for s in solutions)
    report.diverged = sum(s.status == SolutionStatus.DIVERGED for s in solutions)
    report.recoveries = est.recoveries
    if times.size:
        report.mean_opt_time = float(times.mean())
        report.p95_opt_time = float(np.percentile(times, 95))
        report.max_opt_time = float(times.max())
    report.warnings = list(est.warnings)
    return solutions, report
