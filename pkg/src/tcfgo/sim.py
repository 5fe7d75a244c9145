"""Synthetic scenarios: ground truth, IMU streams and GNSS epochs.

The simulated world matches the estimator's model: a flat, non-rotating NED
frame at `origin` with constant gravity. Measurements are synthesized with
the conventions of the gnss module, so that the noise-free loop closes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .estimator.types import NavState
from .geo import (
    WGS84_A,
    WGS84_GM,
    GeodeticPosition,
    LocalFrame,
    ecef_to_lla,
    elevation_azimuth,
    gravity_ned,
    sagnac_correction,
    so3_log,
)
from .gnss import ClockState, Constellation, GnssEpoch, SatObservation, tropo_saastamoinen
from .preint import ImuNoiseParams, ImuSample

ORBIT_RADIUS = 26560e3
IONO_SHELL_HEIGHT = 350e3
_RATE_STEP = 1e-5  # s, central difference for body rates

SAT_PREFIX = {Constellation.GPS: "G", Constellation.GALILEO: "E", Constellation.GLONASS: "R",
              Constellation.BEIDOU: "C"}


class ProfileKind(str, enum.Enum):
    STATIC = "static"
    STRAIGHT_LINE = "straight_line"
    FIGURE_EIGHT = "figure_eight"
    TURN_COURSE = "turn_course"


@dataclass
class Segment:
    """Speed and heading change smoothly by the given amounts; heading rate
    and longitudinal acceleration follow raised-cosine pulses."""

    duration: float
    delta_speed: float = 0.0  # m/s
    delta_heading: float = 0.0  # rad, positive turns right (clockwise from north)


@dataclass
class TrajectoryProfile:
    kind: ProfileKind = ProfileKind.FIGURE_EIGHT
    speed: float = 10.0  # straight line speed, figure-eight peak speed
    radius: float = 50.0  # figure-eight half width
    heading: float = 0.0  # rad
    initial_speed: float = 0.0  # turn course
    segments: List[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.kind = ProfileKind(self.kind)
        self.segments = [s if isinstance(s, Segment) else Segment(**s) for s in self.segments]
        if self.kind == ProfileKind.FIGURE_EIGHT and not (self.radius > 0 and self.speed > 0):
            raise ValueError("figure eight needs positive radius and speed")
        if any(s.duration <= 0 for s in self.segments):
            raise ValueError("segment durations must be positive")

    @classmethod
    def two_turns(cls, speed: float = 10.0, lateral_g: float = 0.3, heading: float = 0.0) -> "TrajectoryProfile":
        """Static start, acceleration, then two 90 degree turns at the given
        peak lateral acceleration, separated by straights."""
        turn_t = 2.0 * (math.pi / 2) * speed / (lateral_g * 9.80665)
        segs = [Segment(5.0), Segment(10.0, delta_speed=speed), Segment(15.0),
                Segment(turn_t, delta_heading=math.pi / 2), Segment(15.0),
                Segment(turn_t, delta_heading=-math.pi / 2), Segment(20.0)]
        return cls(ProfileKind.TURN_COURSE, heading=heading, segments=segs)


@dataclass
class OutageWindow:
    start: float
    end: float
    max_satellites: int = 0  # 0 drops every observation


@dataclass
class NlosFault:
    sat_id: str
    bias: float  # m, added to the pseudorange
    start: float
    end: float


@dataclass
class ScenarioConfig:
    profile: TrajectoryProfile = field(default_factory=TrajectoryProfile)
    origin: Tuple[float, float, float] = (22.3, 114.2, 30.0)  # lat deg, lon deg, h m
    duration: float = 120.0
    imu_rate: float = 100.0
    gnss_rate: float = 1.0
    gnss_start: float = 1.0  # first epoch; the trajectory passes the origin then
    n_satellites: Dict[Constellation, int] = field(default_factory=lambda: {Constellation.GPS: 8})
    elevation_cutoff: float = math.radians(5.0)
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    imu_noise_enabled: bool = True
    bias_walk_enabled: bool = True
    initial_accel_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_gyro_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    gnss_noise_enabled: bool = True
    pr_sigma: float = 2.0  # m at zenith
    rate_sigma: float = 0.05  # m/s at zenith
    clock_bias: float = 3000.0  # m
    clock_drift: float = 0.0  # m/s
    clock_bias_rw: float = 0.5  # m/sqrt(s)
    clock_drift_rw: float = 0.05  # m/s/sqrt(s)
    clock_walk_enabled: bool = True
    inter_system_offsets: Dict[Constellation, float] = field(default_factory=dict)  # m
    atmosphere_enabled: bool = True
    iono_zenith: float = 5.0  # m
    satellite_clocks_enabled: bool = True
    outages: List[OutageWindow] = field(default_factory=list)
    nlos: List[NlosFault] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.profile, TrajectoryProfile):
            self.profile = TrajectoryProfile(**self.profile)
        self.n_satellites = {Constellation(k): int(v) for k, v in self.n_satellites.items()}
        self.inter_system_offsets = {Constellation(k): float(v) for k, v in self.inter_system_offsets.items()}
        self.outages = [o if isinstance(o, OutageWindow) else OutageWindow(**o) for o in self.outages]
        self.nlos = [f if isinstance(f, NlosFault) else NlosFault(**f) for f in self.nlos]
        if not isinstance(self.imu_noise, ImuNoiseParams):
            self.imu_noise = ImuNoiseParams(**self.imu_noise)
        if not (self.duration > 0 and self.imu_rate > 0 and self.gnss_rate > 0):
            raise ValueError("duration and rates must be positive")
        ratio = self.imu_rate / self.gnss_rate
        if abs(ratio - round(ratio)) > 1e-9 or abs(self.gnss_start * self.imu_rate
                                                  - round(self.gnss_start * self.imu_rate)) > 1e-9:
            raise ValueError("GNSS epochs must fall on IMU samples")
        if not sum(self.n_satellites.values()) >= 1:
            raise ValueError("at least one satellite is required")

    @property
    def origin_geodetic(self) -> GeodeticPosition:
        return GeodeticPosition.from_degrees(*self.origin)

    def noise_free(self) -> "ScenarioConfig":
        """Copy with every noise source and random walk disabled."""
        from dataclasses import replace
        return replace(self, imu_noise_enabled=False, bias_walk_enabled=False, gnss_noise_enabled=False,
                       clock_walk_enabled=False)


def degraded_config(seed: int = 0, duration: float = 180.0, **overrides) -> ScenarioConfig:
    """Urban-like scenario: alternating open-sky and 3-satellite windows with NLOS bursts.

    NLOS biases hit the low-elevation satellites during open-sky windows, which is
    where single-epoch positioning has no redundancy to spare.
    """
    rng = np.random.default_rng(seed + 7919)
    outages, nlos = [], []
    t = 10.0
    low = ["G05", "G06", "G07", "G08"]
    while t < duration:
        good = float(rng.uniform(10.0, 20.0))
        burst_start = t + float(rng.uniform(0.0, 0.3 * good))
        for sat in rng.choice(low, size=int(rng.integers(1, 3)), replace=False):
            nlos.append(NlosFault(str(sat), float(rng.uniform(30.0, 80.0)), burst_start,
                                  burst_start + float(rng.uniform(0.5, 0.9)) * good))
        t += good
        bad = float(rng.uniform(10.0, 20.0))
        outages.append(OutageWindow(t, min(t + bad, duration + 1.0), 3))
        t += bad
    kwargs = dict(duration=duration, seed=seed, outages=outages, nlos=nlos)
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


@dataclass
class GroundTruth:
    t: np.ndarray
    position: np.ndarray  # (N, 3) NED
    velocity: np.ndarray
    acceleration: np.ndarray
    attitude: np.ndarray  # (N, 3, 3) body to NED
    angular_rate: np.ndarray  # (N, 3) body frame
    specific_force: np.ndarray  # (N, 3) body frame, bias and noise free
    frame: LocalFrame
    gravity: np.ndarray
    accel_bias: Optional[np.ndarray] = None  # (N, 3), filled by synthesize_imu
    gyro_bias: Optional[np.ndarray] = None
    clock_bias: Optional[np.ndarray] = None  # (N,) GPS clock, m
    clock_drift: Optional[np.ndarray] = None
    inter_system_offsets: Dict[Constellation, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def index(self, t: float, tol: float = 1e-6) -> int:
        i = int(np.searchsorted(self.t, t - tol))
        if i >= len(self.t) or abs(self.t[i] - t) > tol:
            raise KeyError(f"no truth sample at t={t}")
        return i

    def nav_state(self, i: int) -> NavState:
        z = np.zeros(3)
        clock = ClockState(
            float(self.clock_bias[i]) if self.clock_bias is not None else 0.0,
            float(self.clock_drift[i]) if self.clock_drift is not None else 0.0,
            dict(self.inter_system_offsets),
            {c: 0.0 for c in self.inter_system_offsets},
        )
        return NavState(float(self.t[i]), self.position[i].copy(), self.velocity[i].copy(),
                        self.attitude[i].copy(),
                        self.accel_bias[i].copy() if self.accel_bias is not None else z,
                        self.gyro_bias[i].copy() if self.gyro_bias is not None else z, clock)

    def ecef(self, i: Optional[int] = None) -> np.ndarray:
        if i is None:
            return np.array([self.frame.to_ecef(p) for p in self.position])
        return self.frame.to_ecef(self.position[i])


def _euler_batch(roll, pitch, yaw) -> np.ndarray:
    cr, sr, cp, sp, cy, sy = np.cos(roll), np.sin(roll), np.cos(pitch), np.sin(pitch), np.cos(yaw), np.sin(yaw)
    R = np.empty(np.shape(roll) + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def _smooth_step(tau, T):
    """Cycloidal step: 0 to 1 over T with zero first and second derivative
    at both ends. Returns (s, s', s'')."""
    x = np.clip(tau / T, 0.0, 1.0)
    inside = (tau > 0) & (tau < T)
    s = x - np.sin(2 * np.pi * x) / (2 * np.pi)
    ds = np.where(inside, (1 - np.cos(2 * np.pi * x)) / T, 0.0)
    dds = np.where(inside, 2 * np.pi * np.sin(2 * np.pi * x) / T**2, 0.0)
    return s, ds, dds


class _TurnCourse:
    def __init__(self, profile: TrajectoryProfile):
        self.profile = profile
        segs = profile.segments or [Segment(1e9)]
        self.starts = np.concatenate([[0.0], np.cumsum([s.duration for s in segs])])
        self.segs = segs
        v0, psi0 = [profile.initial_speed], [profile.heading]
        for s in segs:
            v0.append(v0[-1] + s.delta_speed)
            psi0.append(psi0[-1] + s.delta_heading)
        self.v0, self.psi0 = np.array(v0), np.array(psi0)
        if np.any(self.v0 < 0):
            raise ValueError("turn course speed becomes negative")
        self.nodes, self.weights = np.polynomial.legendre.leggauss(24)
        self.p0 = np.zeros((len(segs) + 1, 3))
        for k in range(len(segs)):
            self.p0[k + 1] = self.p0[k] + self._integral(np.array([self.starts[k]]), np.array([self.starts[k + 1]]))[0]

    def speed_heading(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.segs))
        v, dv, psi, dpsi, ddpsi = (np.zeros_like(t) for _ in range(5))
        last = k >= len(self.segs)
        kk = np.minimum(k, len(self.segs) - 1)
        T = np.array([s.duration for s in self.segs])[kk]
        DV = np.array([s.delta_speed for s in self.segs])[kk]
        DP = np.array([s.delta_heading for s in self.segs])[kk]
        s, ds, dds = _smooth_step(t - self.starts[kk], T)
        v = np.where(last, self.v0[-1], self.v0[kk] + DV * s)
        dv = np.where(last, 0.0, DV * ds)
        psi = np.where(last, self.psi0[-1], self.psi0[kk] + DP * s)
        dpsi = np.where(last, 0.0, DP * ds)
        ddpsi = np.where(last, 0.0, DP * dds)
        return v, dv, psi, dpsi, ddpsi, k

    def _velocity(self, t):
        v, _, psi, _, _, _ = self.speed_heading(t)
        return np.stack([v * np.cos(psi), v * np.sin(psi), np.zeros_like(v)], axis=-1)

    def _integral(self, a, b):
        """Gauss-Legendre integral of velocity over [a, b] (same segment)."""
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        tq = mid[:, None] + half[:, None] * self.nodes[None, :]
        vq = self._velocity(tq.ravel()).reshape(tq.shape + (3,))
        return half[:, None] * np.einsum("q,nqd->nd", self.weights, vq)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        v, dv, psi, dpsi, _, k = self.speed_heading(t)
        k = np.minimum(k, len(self.segs))
        start = self.starts[k]
        p = self.p0[k] + self._integral(start, t)
        # beyond the last segment the integrand is constant
        c, s = np.cos(psi), np.sin(psi)
        vel = np.stack([v * c, v * s, np.zeros_like(v)], axis=-1)
        acc = np.stack([dv * c - v * dpsi * s, dv * s + v * dpsi * c, np.zeros_like(v)], axis=-1)
        return p, vel, acc, psi


def _kinematics(profile: TrajectoryProfile, t: np.ndarray, t0: float, course: Optional[_TurnCourse]):
    """Position, velocity, acceleration (NED) and yaw, with p(t0) = 0."""
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    ch, sh = math.cos(profile.heading), math.sin(profile.heading)
    if profile.kind == ProfileKind.STATIC:
        zero = np.zeros(t.shape + (3,))
        return zero, zero.copy(), zero.copy(), z + profile.heading
    if profile.kind == ProfileKind.STRAIGHT_LINE:
        d = np.array([ch, sh, 0.0])
        p = (profile.speed * (t - t0))[..., None] * d
        v = np.broadcast_to(profile.speed * d, p.shape).copy()
        return p, v, np.zeros_like(p), z + profile.heading
    if profile.kind == ProfileKind.FIGURE_EIGHT:
        A = profile.radius
        w = profile.speed / (math.sqrt(2.0) * A)
        th = w * (t - t0)
        x, y = A * np.sin(th), 0.5 * A * np.sin(2 * th)
        vx, vy = A * w * np.cos(th), A * w * np.cos(2 * th)
        ax, ay = -A * w * w * np.sin(th), -2 * A * w * w * np.sin(2 * th)
        rot = lambda a, b: np.stack([ch * a - sh * b, sh * a + ch * b, z], axis=-1)
        v = rot(vx, vy)
        return rot(x, y), v, rot(ax, ay), np.arctan2(v[..., 1], v[..., 0])
    p, v, a, psi = course(t)
    p0, *_ = course(np.array([t0]))
    return p - p0[0], v, a, psi


def _attitude(profile, t, t0, course, g):
    p, v, a, yaw = _kinematics(profile, t, t0, course)
    right = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)], axis=-1)
    a_lat = np.einsum("...i,...i->...", a, right)
    roll = np.arctan(a_lat / g)
    vh = np.hypot(v[..., 0], v[..., 1])
    pitch = np.where(vh > 1e-9, np.arctan2(-v[..., 2], np.maximum(vh, 1e-9)), 0.0)
    return p, v, a, _euler_batch(roll, pitch, yaw)


def generate_trajectory(config: ScenarioConfig) -> GroundTruth:
    n = int(round(config.duration * config.imu_rate))
    t = np.arange(n + 1) / config.imu_rate
    frame = LocalFrame(config.origin_geodetic)
    g = gravity_ned(config.origin_geodetic)
    prof = config.profile
    course = _TurnCourse(prof) if prof.kind == ProfileKind.TURN_COURSE else None
    p, v, a, R = _attitude(prof, t, config.gnss_start, course, g[2])
    h = _RATE_STEP
    _, _, _, Rm = _attitude(prof, t - h, config.gnss_start, course, g[2])
    _, _, _, Rp = _attitude(prof, t + h, config.gnss_start, course, g[2])
    dR = np.einsum("nji,njk->nik", Rm, Rp)
    omega = np.array([so3_log(m) for m in dR]) / (2 * h)
    f = np.einsum("nji,nj->ni", R, a - g)
    return GroundTruth(t, p, v, a, R, omega, f, frame, g)


def synthesize_imu(truth: GroundTruth, noise: ImuNoiseParams, true_biases: Sequence[float], seed: int,
                   noise_enabled: bool = True, bias_walk_enabled: bool = True) -> List[ImuSample]:
    """IMU samples with biases evolving as random walks; also records the
    true bias trajectories on `truth`."""
    rng = np.random.default_rng([seed, 1])
    n = len(truth)
    dt = np.diff(truth.t, prepend=truth.t[0])
    b0 = np.asarray(true_biases, dtype=float).reshape(6)
    steps = rng.standard_normal((n, 6))
    steps[0] = 0.0
    scale = np.array([noise.accel_bias_rw] * 3 + [noise.gyro_bias_rw] * 3)
    walk = np.cumsum(steps * scale * np.sqrt(dt)[:, None], axis=0) if bias_walk_enabled else np.zeros((n, 6))
    bias = b0 + walk
    white = rng.standard_normal((n, 6))
    rate = 1.0 / np.median(np.diff(truth.t)) if n > 1 else 1.0
    sig = np.array([noise.accel_noise_density] * 3 + [noise.gyro_noise_density] * 3) * math.sqrt(rate)
    meas = np.hstack([truth.specific_force, truth.angular_rate]) + bias
    if noise_enabled:
        meas = meas + white * sig
    truth.accel_bias, truth.gyro_bias = bias[:, :3].copy(), bias[:, 3:].copy()
    return [ImuSample(float(truth.t[i]), meas[i, :3], meas[i, 3:]) for i in range(n)]


@dataclass
class SatelliteOrbit:
    sat_id: str
    constellation: Constellation
    r0: np.ndarray  # ECEF position at t = 0
    axis: np.ndarray  # unit orbit normal
    mean_motion: float  # rad/s

    def state(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        ang = self.mean_motion * t
        k = self.axis
        r = (self.r0 * math.cos(ang) + np.cross(k, self.r0) * math.sin(ang)
             + k * (k @ self.r0) * (1 - math.cos(ang)))
        return r, self.mean_motion * np.cross(k, r)


def _sky_layout(n: int, offset: float) -> List[Tuple[float, float]]:
    """(elevation, azimuth) pairs spread over the sky for low DOP."""
    if n == 1:
        return [(math.radians(80.0), offset)]
    els = np.radians(np.linspace(80.0, 15.0, n))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    return [(float(e), float((offset + i * golden) % (2 * math.pi))) for i, e in enumerate(els)]


def build_constellation(config: ScenarioConfig) -> List[SatelliteOrbit]:
    """Circular orbits placed so that the layout at the scenario start is
    spread over the sky above the origin."""
    frame = LocalFrame(config.origin_geodetic)
    rx = frame.origin_ecef
    orbits = []
    layout_rng = np.random.default_rng(12345)  # geometry is part of the scenario definition, not the noise
    n_motion = math.sqrt(WGS84_GM / ORBIT_RADIUS**3)
    for ci, (const, count) in enumerate(sorted(config.n_satellites.items(), key=lambda kv: list(Constellation).index(kv[0]))):
        for i, (el, az) in enumerate(_sky_layout(count, offset=ci * 0.7)):
            d_ned = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), -math.sin(el)])
            d = frame.R_ne @ d_ned
            b = rx @ d
            s = -b + math.sqrt(b * b - (rx @ rx - ORBIT_RADIUS**2))
            r0 = rx + s * d
            k = np.cross(r0, layout_rng.normal(size=3))
            k /= np.linalg.norm(k)
            orbits.append(SatelliteOrbit(f"{SAT_PREFIX[const]}{i + 1:02d}", const, r0, k, n_motion))
    return orbits


def synthesize_constellation(config: ScenarioConfig, t: float) -> List[Tuple[str, np.ndarray, np.ndarray]]:
    return [(o.sat_id, *o.state(t)) for o in build_constellation(config)]


def iono_delay(elevation: float, zenith: float) -> float:
    """Single-layer mapping of a zenith ionospheric delay."""
    x = WGS84_A * math.cos(elevation) / (WGS84_A + IONO_SHELL_HEIGHT)
    return zenith / math.sqrt(1.0 - x * x)


def synthesize_clock(truth: GroundTruth, config: ScenarioConfig, seed: int):
    rng = np.random.default_rng([seed, 2])
    n = len(truth)
    dt = np.diff(truth.t, prepend=truth.t[0])
    drift = np.full(n, config.clock_drift)
    bias = np.full(n, config.clock_bias)
    if config.clock_walk_enabled:
        wd = rng.standard_normal(n) * config.clock_drift_rw * np.sqrt(dt)
        wb = rng.standard_normal(n) * config.clock_bias_rw * np.sqrt(dt)
        wd[0] = wb[0] = 0.0
        drift = config.clock_drift + np.cumsum(wd)
    else:
        wb = np.zeros(n)
    bias = config.clock_bias + np.concatenate([[0.0], np.cumsum(drift[:-1] * dt[1:])]) + np.cumsum(wb)
    truth.clock_bias, truth.clock_drift = bias, drift
    truth.inter_system_offsets = dict(config.inter_system_offsets)


def epoch_times(config: ScenarioConfig) -> np.ndarray:
    n = int(math.floor((config.duration - config.gnss_start) * config.gnss_rate + 1e-9))
    return config.gnss_start + np.arange(n + 1) / config.gnss_rate


def synthesize_gnss(truth: GroundTruth, config: ScenarioConfig, seed: int,
                    orbits: Optional[List[SatelliteOrbit]] = None) -> List[GnssEpoch]:
    rng = np.random.default_rng([seed, 3])
    orbits = orbits if orbits is not None else build_constellation(config)
    sat_rng = np.random.default_rng(54321)
    sat_clk = {o.sat_id: (sat_rng.uniform(-1e5, 1e5), sat_rng.uniform(-0.02, 0.02)) for o in orbits}
    if truth.clock_bias is None:
        synthesize_clock(truth, config, seed)
    epochs = []
    for t in epoch_times(config):
        i = truth.index(t)
        rx = truth.frame.to_ecef(truth.position[i])
        rx_vel = truth.frame.R_ne @ truth.velocity[i]
        llh = ecef_to_lla(rx)
        cands = []
        for o in orbits:
            sp, sv = o.state(t)
            el, _ = elevation_azimuth(rx, sp)
            if el >= config.elevation_cutoff:
                cands.append((o, sp, sv, el))
        obs = []
        for o, sp, sv, el in cands:
            c = o.constellation
            d = sp - rx
            rng_m = float(np.linalg.norm(d))
            u = d / rng_m
            clk_b = truth.clock_bias[i] + config.inter_system_offsets.get(c, 0.0)
            clk_d = truth.clock_drift[i]
            sb, sd = sat_clk[o.sat_id] if config.satellite_clocks_enabled else (0.0, 0.0)
            sb = sb + sd * t
            trop = tropo_saastamoinen(el, llh) if config.atmosphere_enabled else 0.0
            ion = iono_delay(el, config.iono_zenith) if config.atmosphere_enabled else 0.0
            pr = rng_m + sagnac_correction(sp, rx) + clk_b + trop + ion - sb
            rate = float(u @ (sv - rx_vel)) + clk_d - sd
            if config.gnss_noise_enabled:
                pr += rng.standard_normal() * config.pr_sigma / math.sin(el)
                rate += rng.standard_normal() * config.rate_sigma / math.sin(el)
            for f in config.nlos:
                if f.sat_id == o.sat_id and f.start <= t < f.end:
                    pr += f.bias
            cn0 = 30.0 + 20.0 * math.sin(el)
            obs.append((el, SatObservation(o.sat_id, c, pr, rate, sp, sv, sb, sd, trop, ion, cn0)))
        # outages act after synthesis so they leave the noise realization untouched
        for w in config.outages:
            if w.start <= t < w.end:
                keep = {id(x) for x in sorted(obs, key=lambda e: -e[0])[: w.max_satellites]}
                obs = [e for e in obs if id(e) in keep]
        epochs.append(GnssEpoch(float(t), [x for _, x in obs]))
    return epochs


@dataclass
class Scenario:
    config: ScenarioConfig
    truth: GroundTruth
    imu: List[ImuSample]
    gnss: List[GnssEpoch]
    orbits: List[SatelliteOrbit]


def simulate(config: ScenarioConfig) -> Scenario:
    truth = generate_trajectory(config)
    biases = list(config.initial_accel_bias) + list(config.initial_gyro_bias)
    imu = synthesize_imu(truth, config.imu_noise, biases, config.seed, config.imu_noise_enabled,
                         config.bias_walk_enabled)
    synthesize_clock(truth, config, config.seed)
    orbits = build_constellation(config)
    gnss = synthesize_gnss(truth, config, config.seed, orbits)
    return Scenario(config, truth, imu, gnss, orbits)
