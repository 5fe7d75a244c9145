"""Line-oriented text formats for IMU, GNSS, solution, truth and mask files.

Measurement files are written with repr() floats so that write -> parse is
lossless; solution files use fixed precision so runs diff cleanly.
"""

from __future__ import annotations

import math
from typing import Iterable, List, Sequence

import numpy as np

from .estimator import EpochSolution, SolutionStatus
from .geo import GeodeticPosition, ecef_to_lla, rotation_to_euler
from .gnss import CONSTELLATION_ORDER, Constellation, GnssEpoch, SatObservation
from .preint import ImuSample

IMU_HEADER = "# t_sec ax ay az gx gy gz"
GNSS_HEADER = ("# t_sec sat_id const pr prr sat_x sat_y sat_z sat_vx sat_vy sat_vz "
               "sat_clk sat_clkd trop iono cn0")
TRUTH_HEADER = "# t_sec lat_deg lon_deg h vn ve vd roll_deg pitch_deg yaw_deg clk_gps clkd_gps"
EMPTY_EPOCH = "-"  # sat_id and const of a marker line for an epoch without observations


class FormatError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def _f(x) -> str:
    return repr(float(x))


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            s = line.strip()
            if s and not s.startswith("#"):
                yield n, s.split()


def _floats(path, n, toks, count):
    if len(toks) != count:
        raise FormatError(path, n, f"expected {count} fields, got {len(toks)}")
    try:
        return [float(t) for t in toks]
    except ValueError as e:
        raise FormatError(path, n, str(e)) from None


# -- IMU ---------------------------------------------------------------------

def write_imu_file(samples: Iterable[ImuSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(IMU_HEADER + "\n")
        for s in samples:
            vals = [s.timestamp, *s.specific_force, *s.angular_rate]
            fh.write(" ".join(_f(v) for v in vals) + "\n")


def parse_imu_file(path) -> List[ImuSample]:
    out: List[ImuSample] = []
    for n, toks in _lines(path):
        v = _floats(path, n, toks, 7)
        if out and not v[0] > out[-1].timestamp:
            raise FormatError(path, n, f"timestamp {v[0]} is not after {out[-1].timestamp}")
        out.append(ImuSample(v[0], np.array(v[1:4]), np.array(v[4:7])))
    return out


# -- GNSS --------------------------------------------------------------------

def write_gnss_file(epochs: Iterable[GnssEpoch], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(GNSS_HEADER + "\n")
        for ep in epochs:
            if not ep.observations:
                fh.write(" ".join([_f(ep.timestamp), EMPTY_EPOCH, EMPTY_EPOCH] + ["nan"] * 13) + "\n")
            for o in ep.observations:
                vals = [o.pseudorange, o.pseudorange_rate, *o.sat_pos, *o.sat_vel, o.sat_clock_bias,
                        o.sat_clock_drift, o.tropo_delay, o.iono_delay, o.cn0]
                fh.write(" ".join([_f(ep.timestamp), o.sat_id, o.constellation.value]
                                  + [_f(v) for v in vals]) + "\n")


def parse_gnss_file(path) -> List[GnssEpoch]:
    epochs: List[GnssEpoch] = []
    t_cur, obs, seen = None, [], set()

    def flush():
        if t_cur is not None:
            epochs.append(GnssEpoch(t_cur, obs))

    for n, toks in _lines(path):
        if len(toks) != 16:
            raise FormatError(path, n, f"expected 16 fields, got {len(toks)}")
        t = _floats(path, n, toks[:1], 1)[0]
        if t_cur is None or t != t_cur:
            if t_cur is not None and t < t_cur:
                raise FormatError(path, n, f"epoch time {t} is before {t_cur}")
            flush()
            t_cur, obs, seen = t, [], set()
        sat_id, const = toks[1], toks[2]
        if sat_id == EMPTY_EPOCH:
            continue
        try:
            c = Constellation.parse(const)
        except ValueError as e:
            raise FormatError(path, n, str(e)) from None
        if sat_id in seen:
            raise FormatError(path, n, f"duplicate observation of {sat_id} at t={t}")
        seen.add(sat_id)
        v = _floats(path, n, toks[3:], 13)
        try:
            obs.append(SatObservation(sat_id, c, v[0], v[1], np.array(v[2:5]), np.array(v[5:8]),
                                      v[8], v[9], v[10], v[11], v[12]))
        except ValueError as e:
            raise FormatError(path, n, str(e)) from None
    flush()
    return epochs


# -- solutions -----------------------------------------------------------------

def solution_header(constellations: Sequence[Constellation]) -> str:
    offs = [f"off_{c.value}" for c in constellations if c != Constellation.GPS]
    return " ".join(["# t status lat lon h vn ve vd roll pitch yaw clk_gps clkd_gps", *offs, "n_sats opt_time"])


def _fx(v, prec: int) -> str:
    if not math.isfinite(v):
        return "nan"
    out = f"{v:.{prec}f}"
    return out[1:] if out.startswith("-") and not out.strip("-0.") else out  # no signed zeros


def solution_line(sol: EpochSolution, constellations: Sequence[Constellation], record_timing: bool) -> str:
    st = sol.state
    others = [c for c in constellations if c != Constellation.GPS]
    if sol.ecef is not None and np.all(np.isfinite(sol.ecef)):
        g = ecef_to_lla(sol.ecef)
        pos = [_fx(math.degrees(g.lat), 10), _fx(math.degrees(g.lon), 10), _fx(g.h, 4)]
    else:
        pos = ["nan"] * 3
    vel = [_fx(v, 5) for v in st.velocity]
    if np.all(np.isfinite(st.attitude)):
        att = [_fx(math.degrees(a), 6) for a in rotation_to_euler(st.attitude)]
    else:
        att = ["nan"] * 3
    clk = [_fx(st.clock.gps_bias, 4), _fx(st.clock.gps_drift, 5)]
    offs = [_fx(st.clock.inter_system_offsets.get(c, math.nan), 4) for c in others]
    tm = _fx(sol.optimization_time, 6) if record_timing else "nan"
    return " ".join([f"{st.timestamp:.3f}", sol.status.value, *pos, *vel, *att, *clk, *offs,
                     str(sol.total_sats), tm])


def write_solution_file(solutions: Iterable[EpochSolution], path, constellations=(Constellation.GPS,),
                        record_timing: bool = False) -> None:
    consts = [c for c in CONSTELLATION_ORDER if c in set(constellations)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(solution_header(consts) + "\n")
        for s in solutions:
            fh.write(solution_line(s, consts, record_timing) + "\n")


class SolutionTable:
    """Parsed solution file: columns as arrays."""

    def __init__(self, t, status, lat, lon, h, opt_time, n_sats):
        self.t = np.asarray(t, dtype=float)
        self.status = list(status)
        self.lla = np.column_stack([np.radians(lat), np.radians(lon), h]) if len(t) else np.zeros((0, 3))
        self.opt_time = np.asarray(opt_time, dtype=float)
        self.n_sats = np.asarray(n_sats, dtype=int)

    @property
    def valid(self) -> np.ndarray:
        return np.array([s == SolutionStatus.VALID.value for s in self.status], dtype=bool)

    def ecef(self) -> np.ndarray:
        from .geo import lla_to_ecef

        out = np.full((len(self.t), 3), np.nan)
        for i, row in enumerate(self.lla):
            if np.all(np.isfinite(row)):
                out[i] = lla_to_ecef(GeodeticPosition(*row))
        return out


def parse_solution_file(path) -> SolutionTable:
    cols = {k: [] for k in ("t", "status", "lat", "lon", "h", "opt", "n")}
    statuses = {s.value for s in SolutionStatus}
    for n, toks in _lines(path):
        if len(toks) < 15:
            raise FormatError(path, n, f"expected at least 15 fields, got {len(toks)}")
        if toks[1] not in statuses:
            raise FormatError(path, n, f"unknown status {toks[1]!r}")
        try:
            cols["t"].append(float(toks[0]))
            cols["lat"].append(float(toks[2]))
            cols["lon"].append(float(toks[3]))
            cols["h"].append(float(toks[4]))
            cols["n"].append(int(toks[-2]))
            cols["opt"].append(float(toks[-1]))
        except ValueError as e:
            raise FormatError(path, n, str(e)) from None
        cols["status"].append(toks[1])
    return SolutionTable(cols["t"], cols["status"], cols["lat"], cols["lon"], cols["h"], cols["opt"], cols["n"])


# -- truth and masks -----------------------------------------------------------

def write_truth_file(truth, path, stride: int = 1) -> None:
    """Ground truth from the simulator, geodetic position and NED velocity."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRUTH_HEADER + "\n")
        for i in range(0, len(truth.t), stride):
            g = truth.frame.to_lla(truth.position[i])
            r, p, y = (math.degrees(a) for a in rotation_to_euler(truth.attitude[i]))
            clk = truth.clock_bias[i] if truth.clock_bias is not None else math.nan
            clkd = truth.clock_drift[i] if truth.clock_drift is not None else math.nan
            vals = [truth.t[i], math.degrees(g.lat), math.degrees(g.lon), g.h, *truth.velocity[i], r, p, y, clk, clkd]
            fh.write(" ".join(_f(v) for v in vals) + "\n")


def parse_truth_file(path):
    from .eval import TruthTrack

    rows = []
    for n, toks in _lines(path):
        if len(toks) < 4:
            raise FormatError(path, n, f"expected at least 4 fields, got {len(toks)}")
        rows.append(_floats(path, n, toks[:4], 4))
    a = np.array(rows, dtype=float).reshape(-1, 4)
    if a.shape[0] > 1 and np.any(np.diff(a[:, 0]) <= 0):
        raise ValueError(f"{path}: truth timestamps must be strictly increasing")
    return TruthTrack.from_lla(a[:, 0], np.radians(a[:, 1]), np.radians(a[:, 2]), a[:, 3])


def parse_mask_file(path) -> List[tuple]:
    """Excluded time intervals, one `t_start t_end` pair per line."""
    out = []
    for n, toks in _lines(path):
        a, b = _floats(path, n, toks, 2)
        if b < a:
            raise FormatError(path, n, "interval end before start")
        out.append((a, b))
    return out
