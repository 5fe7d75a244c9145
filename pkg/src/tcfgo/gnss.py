"""GNSS observation model: corrections, pseudorange and Doppler residuals,
troposphere model and single point positioning (SPP).

Conventions, fixed here and mirrored by the simulator:

* corrected pseudorange = raw + sat_clock_bias; the prediction is
  range + Sagnac + clock + T + I.
* corrected rate = raw + sat_clock_drift - u.v_sat, with u the receiver to
  satellite unit vector at the approximate receiver position; the
  prediction is -u.v_rx + clock drift.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .geo import (
    OMEGA_EARTH,
    SPEED_OF_LIGHT,
    GeodeticPosition,
    ecef_to_lla,
    elevation_azimuth,
    sagnac_correction,
)

log = logging.getLogger(__name__)

PSEUDORANGE_BAND = (1e7, 5e7)
TROPO_MIN_ELEVATION = math.radians(5.0)


class Constellation(str, enum.Enum):
    GPS = "GPS"
    GALILEO = "GAL"
    GLONASS = "GLO"
    BEIDOU = "BDS"

    @classmethod
    def parse(cls, token: str) -> "Constellation":
        try:
            return cls(token.upper())
        except ValueError:
            supported = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown constellation {token!r}; supported: {supported}") from None


CONSTELLATION_ORDER = list(Constellation)


@dataclass(frozen=True)
class SatObservation:
    sat_id: str
    constellation: Constellation
    pseudorange: float  # m
    pseudorange_rate: float  # m/s
    sat_pos: np.ndarray  # ECEF at transmit time, m
    sat_vel: np.ndarray  # ECEF, m/s
    sat_clock_bias: float = math.nan  # m
    sat_clock_drift: float = math.nan  # m/s
    tropo_delay: float = math.nan  # m
    iono_delay: float = math.nan  # m
    cn0: float = math.nan  # dB-Hz
    elevation: Optional[float] = None
    corrected: bool = False
    los: Optional[np.ndarray] = None  # set by apply_corrections

    def __post_init__(self):
        object.__setattr__(self, "constellation", Constellation(self.constellation))
        object.__setattr__(self, "sat_pos", np.asarray(self.sat_pos, dtype=float).reshape(3))
        object.__setattr__(self, "sat_vel", np.asarray(self.sat_vel, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.sat_pos)):
            raise ValueError(f"{self.sat_id}: non-finite satellite position")
        if not (math.isfinite(self.pseudorange) and math.isfinite(self.pseudorange_rate)):
            raise ValueError(f"{self.sat_id}: non-finite pseudorange or rate")
        lo, hi = PSEUDORANGE_BAND
        if not self.corrected and not lo < self.pseudorange < hi:
            raise ValueError(f"{self.sat_id}: pseudorange {self.pseudorange:.1f} m outside ({lo:g}, {hi:g})")


@dataclass(frozen=True)
class GnssEpoch:
    timestamp: float
    observations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        seen = set()
        for o in self.observations:
            if o.sat_id in seen:
                raise ValueError(f"duplicate observation of {o.sat_id} at t={self.timestamp}")
            seen.add(o.sat_id)

    def constellations(self) -> List[Constellation]:
        present = {o.constellation for o in self.observations}
        return [c for c in CONSTELLATION_ORDER if c in present]


@dataclass
class ClockState:
    """Receiver clock in meters; GPS is the reference time scale."""

    gps_bias: float = 0.0
    gps_drift: float = 0.0
    inter_system_offsets: Dict[Constellation, float] = field(default_factory=dict)
    inter_system_drifts: Dict[Constellation, float] = field(default_factory=dict)

    def __post_init__(self):
        self.inter_system_offsets = {Constellation(k): float(v) for k, v in self.inter_system_offsets.items()}
        self.inter_system_drifts = {Constellation(k): float(v) for k, v in self.inter_system_drifts.items()}
        for table in (self.inter_system_offsets, self.inter_system_drifts):
            if table.get(Constellation.GPS, 0.0) != 0.0:
                raise ValueError("GPS is the clock reference; its inter-system terms must be zero")
            table.pop(Constellation.GPS, None)

    def bias(self, c: Constellation) -> float:
        return self.gps_bias + self.inter_system_offsets.get(c, 0.0)

    def drift(self, c: Constellation) -> float:
        return self.gps_drift + self.inter_system_drifts.get(c, 0.0)

    def to_vectors(self, constellations: Sequence[Constellation]):
        """Bias and drift vectors laid out as [gps, offsets of the non-GPS
        entries of `constellations`]."""
        others = [c for c in constellations if c != Constellation.GPS]
        b = np.array([self.gps_bias] + [self.inter_system_offsets.get(c, 0.0) for c in others])
        d = np.array([self.gps_drift] + [self.inter_system_drifts.get(c, 0.0) for c in others])
        return b, d

    @classmethod
    def from_vectors(cls, constellations: Sequence[Constellation], bias, drift) -> "ClockState":
        others = [c for c in constellations if c != Constellation.GPS]
        return cls(float(bias[0]), float(drift[0]),
                   {c: float(x) for c, x in zip(others, bias[1:])},
                   {c: float(x) for c, x in zip(others, drift[1:])})


def clock_index(constellations: Sequence[Constellation], c: Constellation) -> int:
    """Index of the offset entry of c in a clock vector (0 for GPS)."""
    others = [x for x in constellations if x != Constellation.GPS]
    return 0 if c == Constellation.GPS else 1 + others.index(c)


def los_unit_vector(rx_pos: np.ndarray, sat_pos: np.ndarray) -> np.ndarray:
    d = np.asarray(sat_pos, dtype=float) - np.asarray(rx_pos, dtype=float)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("receiver and satellite positions coincide")
    return d / n


def tropo_saastamoinen(elevation: float, pos: GeodeticPosition, humidity: float = 0.7,
                       return_flag: bool = False):
    """Saastamoinen slant delay with standard atmosphere and 1/sin(el)
    mapping. Below 5 degrees the 5 degree value is returned and flagged."""
    clamped = elevation < TROPO_MIN_ELEVATION
    el = max(elevation, TROPO_MIN_ELEVATION)
    h = min(max(pos.h, 0.0), 1e4)  # the standard atmosphere is used between sea level and 10 km
    pressure = 1013.25 * (1.0 - 2.2557e-5 * h) ** 5.2568  # hPa
    temp = 15.0 - 6.5e-3 * h + 273.16  # K
    e = 6.108 * humidity * math.exp((17.15 * temp - 4684.0) / (temp - 38.45))
    z = math.pi / 2 - el
    dry = 0.0022768 * pressure / (1.0 - 0.00266 * math.cos(2 * pos.lat) - 0.00028 * h / 1e3) / math.cos(z)
    wet = 0.002277 * (1255.0 / temp + 0.05) * e / math.cos(z)
    if return_flag:
        return dry + wet, clamped
    return dry + wet


def apply_corrections(raw: SatObservation, rx_pos_approx: np.ndarray) -> SatObservation:
    """Compensate satellite clock terms and fold the satellite velocity into
    the rate. Missing tropo falls back to Saastamoinen, missing iono to 0."""
    if raw.corrected:
        raise ValueError(f"{raw.sat_id}: corrections already applied")
    missing = [n for n in ("sat_clock_bias", "sat_clock_drift") if not math.isfinite(getattr(raw, n))]
    if not np.all(np.isfinite(raw.sat_vel)):
        missing.append("sat_vel")
    if missing:
        raise ValueError(f"{raw.sat_id}: missing correction fields: {', '.join(missing)}")
    rx = np.asarray(rx_pos_approx, dtype=float)
    u = los_unit_vector(rx, raw.sat_pos)
    el, _ = elevation_azimuth(rx, raw.sat_pos)
    tropo, iono = raw.tropo_delay, raw.iono_delay
    if not math.isfinite(tropo):
        tropo = tropo_saastamoinen(el, ecef_to_lla(rx))
        log.debug("%s: no tropo delay supplied, using Saastamoinen %.3f m", raw.sat_id, tropo)
    if not math.isfinite(iono):
        log.warning("%s: no iono delay supplied, assuming 0", raw.sat_id)
        iono = 0.0
    return replace(
        raw,
        pseudorange=raw.pseudorange + raw.sat_clock_bias,
        pseudorange_rate=raw.pseudorange_rate + raw.sat_clock_drift - float(u @ raw.sat_vel),
        tropo_delay=tropo,
        iono_delay=iono,
        elevation=el,
        corrected=True,
        los=u,
    )


def sagnac_gradient(sat_pos: np.ndarray) -> np.ndarray:
    """d sagnac_correction(sat, rx) / d rx."""
    sat_pos = np.asarray(sat_pos, dtype=float)
    g = np.zeros(sat_pos.shape)
    g[..., 0] = -sat_pos[..., 1]
    g[..., 1] = sat_pos[..., 0]
    return g * (OMEGA_EARTH / SPEED_OF_LIGHT)


@dataclass
class PseudorangeJacobians:
    d_pos: np.ndarray  # (3,)
    d_gps_bias: float
    d_offset: float  # w.r.t. inter_system_offsets[constellation]; 0 for GPS


def pseudorange_residual(rx_pos: np.ndarray, clock: ClockState, obs: SatObservation):
    """r = rho - (|sat - rx| + Sagnac + dt + T + I), with Jacobians."""
    if not obs.corrected:
        raise ValueError(f"{obs.sat_id}: observation must be corrected first")
    rx = np.asarray(rx_pos, dtype=float)
    u = los_unit_vector(rx, obs.sat_pos)
    rng = float(np.linalg.norm(obs.sat_pos - rx))
    pred = (rng + sagnac_correction(obs.sat_pos, rx) + clock.bias(obs.constellation)
            + obs.tropo_delay + obs.iono_delay)
    r = obs.pseudorange - pred
    d_pos = u - sagnac_gradient(obs.sat_pos)
    d_off = 0.0 if obs.constellation == Constellation.GPS else -1.0
    return r, PseudorangeJacobians(d_pos, -1.0, d_off)


@dataclass
class DopplerJacobians:
    d_vel: np.ndarray
    d_gps_drift: float
    d_offset: float


def doppler_residual(rx_vel: np.ndarray, clock: ClockState, obs: SatObservation):
    """r = rate_corrected - (-u.v_rx + clock drift), with Jacobians."""
    if not obs.corrected or obs.los is None:
        raise ValueError(f"{obs.sat_id}: observation must be corrected first")
    v = np.asarray(rx_vel, dtype=float)
    r = obs.pseudorange_rate - (-float(obs.los @ v) + clock.drift(obs.constellation))
    d_off = 0.0 if obs.constellation == Constellation.GPS else -1.0
    return r, DopplerJacobians(obs.los.copy(), -1.0, d_off)


def measurement_sigma(sigma0, elevation, cn0=None, cn0_ref: Optional[float] = None):
    """sigma0 / sin(el), optionally inflated for C/N0 below cn0_ref."""
    s = np.asarray(sigma0, dtype=float) / np.sin(np.maximum(elevation, 1e-3))
    if cn0_ref is not None and cn0 is not None:
        cn0 = np.nan_to_num(np.asarray(cn0, dtype=float), nan=cn0_ref)
        s = s * np.sqrt(10.0 ** (np.maximum(cn0_ref - cn0, 0.0) / 10.0))
    return s


@dataclass
class SppSolution:
    available: bool
    timestamp: float
    position: Optional[np.ndarray] = None  # ECEF
    velocity: Optional[np.ndarray] = None  # ECEF
    clock: Optional[ClockState] = None
    constellations: List[Constellation] = field(default_factory=list)
    num_sats: int = 0
    pdop: float = math.nan
    iterations: int = 0
    pr_residuals: Optional[np.ndarray] = None
    rate_residuals: Optional[np.ndarray] = None
    velocity_available: bool = False
    reason: str = ""


def _clock_columns(consts: Sequence[Constellation], ref: Constellation) -> tuple:
    return tuple(c for c in consts if c != ref)


def spp_solve(epoch: GnssEpoch, init: Optional[np.ndarray] = None, pr_sigma0: float = 3.0,
              rate_sigma0: float = 0.1, elevation_mask: float = math.radians(10.0),
              cn0_ref: Optional[float] = None, max_iterations: int = 20, tol: float = 1e-4,
              exclude: Sequence[str] = ()) -> SppSolution:
    """Iterated weighted least squares on pseudoranges, then a linear solve
    for velocity and clock drift on the rates. Observations are raw."""
    obs = [o for o in epoch.observations if o.sat_id not in set(exclude)]
    obs = [o for o in obs if math.isfinite(o.sat_clock_bias) and math.isfinite(o.sat_clock_drift)]
    t = epoch.timestamp
    x = np.zeros(3) if init is None else np.asarray(init, dtype=float).copy()
    consts = [c for c in CONSTELLATION_ORDER if any(o.constellation == c for o in obs)]
    if not consts:
        return SppSolution(False, t, reason="no observations")
    # with GPS absent the first present system is the bias reference
    ref = Constellation.GPS if Constellation.GPS in consts else consts[0]
    masked = init is not None and np.linalg.norm(init) > 6e6

    used = obs
    it = 0
    clk = np.zeros(1)
    cols: tuple = ()
    for it in range(1, max_iterations + 1):
        near_surface = np.linalg.norm(x) > 6e6
        if near_surface:
            els = np.array([elevation_azimuth(x, o.sat_pos)[0] for o in obs])
        else:
            els = np.full(len(obs), math.pi / 2)
        keep = els >= elevation_mask if (masked or near_surface) else np.ones(len(obs), bool)
        used = [o for o, k in zip(obs, keep) if k]
        els = els[keep]
        cols = _clock_columns([c for c in consts if any(o.constellation == c for o in used)], ref)
        n = 3 + 1 + len(cols)
        if len(used) < n:
            return SppSolution(False, t, num_sats=len(used), iterations=it,
                               reason=f"{len(used)} satellites for {n} unknowns")
        if clk.size != 1 + len(cols):
            clk = np.zeros(1 + len(cols))
        sat = np.array([o.sat_pos for o in used])
        d = sat - x
        rng = np.linalg.norm(d, axis=1)
        u = d / rng[:, None]
        pred = rng + np.array([sagnac_correction(s, x) for s in sat]) + clk[0]
        for j, c in enumerate(cols):
            pred += clk[1 + j] * np.array([o.constellation == c for o in used])
        tropo = np.array([o.tropo_delay if math.isfinite(o.tropo_delay) else
                          (tropo_saastamoinen(e, ecef_to_lla(x)) if near_surface else 0.0)
                          for o, e in zip(used, els)])
        iono = np.array([o.iono_delay if math.isfinite(o.iono_delay) else 0.0 for o in used])
        rho = np.array([o.pseudorange + o.sat_clock_bias for o in used])
        res = rho - pred - tropo - iono
        H = np.zeros((len(used), n))
        H[:, :3] = -u + sagnac_gradient(sat)
        H[:, 3] = 1.0
        for j, c in enumerate(cols):
            H[:, 4 + j] = [o.constellation == c for o in used]
        w = 1.0 / measurement_sigma(pr_sigma0, els, [o.cn0 for o in used], cn0_ref)
        dx, *_ = np.linalg.lstsq(H * w[:, None], res * w, rcond=None)
        x = x + dx[:3]
        clk = clk + dx[3:]
        if np.linalg.norm(dx[:3]) < tol:
            if not masked and np.linalg.norm(x) > 6e6:
                masked = True  # apply the elevation mask and re-converge
                continue
            break
    else:
        return SppSolution(False, t, num_sats=len(used), iterations=it, reason="did not converge")

    if not np.all(np.isfinite(x)) or np.linalg.norm(x) < 6e6:
        return SppSolution(False, t, num_sats=len(used), iterations=it, reason="diverged")
    try:
        Q = np.linalg.inv(H.T @ H)
        pdop = float(math.sqrt(np.trace(Q[:3, :3])))
    except np.linalg.LinAlgError:
        pdop = math.inf
    sat = np.array([o.sat_pos for o in used])
    u = (sat - x) / np.linalg.norm(sat - x, axis=1)[:, None]
    pr_res = res - H @ dx

    # velocity and drift from rates, linear in the unknowns
    rate = np.array([o.pseudorange_rate + o.sat_clock_drift - u[i] @ o.sat_vel for i, o in enumerate(used)])
    ok = np.isfinite(rate)
    vel, drift, rate_res, v_ok = None, np.zeros(1 + len(cols)), None, False
    if ok.sum() >= 4 + len(cols):
        Hv = np.zeros((len(used), 4 + len(cols)))
        Hv[:, :3] = -u
        Hv[:, 3] = 1.0
        for j, c in enumerate(cols):
            Hv[:, 4 + j] = [o.constellation == c for o in used]
        wv = 1.0 / measurement_sigma(rate_sigma0, els, [o.cn0 for o in used], cn0_ref)
        sol, *_ = np.linalg.lstsq((Hv * wv[:, None])[ok], (rate * wv)[ok], rcond=None)
        vel, drift, v_ok = sol[:3], sol[3:], True
        rate_res = rate - Hv @ sol

    # with no GPS in view the reference system's bias stands in for the GPS bias
    clock = ClockState(float(clk[0]), float(drift[0]), {c: float(clk[1 + j]) for j, c in enumerate(cols)},
                       {c: float(drift[1 + j]) for j, c in enumerate(cols)})
    return SppSolution(True, t, x, vel, clock, [ref, *cols], len(used), pdop, it, pr_res, rate_res, v_ok)

