"""WGS84 frames, SO(3) helpers, Sagnac correction and normal gravity.

Rotations are plain 3x3 numpy arrays. The local navigation frame is NED.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# WGS84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_GM = 3.986004418e14
OMEGA_EARTH = 7.2921151467e-5
SPEED_OF_LIGHT = 299792458.0

# Somigliana normal gravity
GRAVITY_EQUATOR = 9.7803253359
GRAVITY_POLE = 9.8321849379
_SOMIGLIANA_K = WGS84_B * GRAVITY_POLE / (WGS84_A * GRAVITY_EQUATOR) - 1.0
_GRAVITY_M = OMEGA_EARTH**2 * WGS84_A**2 * WGS84_B / WGS84_GM

_SMALL_ANGLE = 1e-8


class GeodeticPosition(NamedTuple):
    """Latitude/longitude in radians, height in meters above the ellipsoid."""

    lat: float
    lon: float
    h: float

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, h: float) -> "GeodeticPosition":
        return cls(math.radians(lat_deg), math.radians(lon_deg), float(h))

    def normalized(self) -> "GeodeticPosition":
        if abs(self.lat) > math.pi / 2 + 1e-12:
            raise ValueError(f"latitude out of range: {self.lat}")
        lon = math.remainder(self.lon, 2.0 * math.pi)
        if lon <= -math.pi:
            lon += 2.0 * math.pi
        return GeodeticPosition(self.lat, lon, self.h)


def lla_to_ecef(p: GeodeticPosition) -> np.ndarray:
    lat, lon, h = p
    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array(
        [
            (n + h) * clat * math.cos(lon),
            (n + h) * clat * math.sin(lon),
            (n * (1.0 - WGS84_E2) + h) * slat,
        ]
    )


def ecef_to_lla(p: np.ndarray, tol: float = 1e-12, max_iter: int = 20) -> GeodeticPosition:
    """Iterative inverse starting from Bowring's parametric latitude guess."""
    x, y, z = (float(c) for c in p)
    if not all(map(math.isfinite, (x, y, z))):
        raise ValueError("non-finite ECEF position")
    rho = math.hypot(x, y)
    if rho < 1e-3 and abs(z) < 1e-3:
        raise ValueError("ECEF position at the Earth's center has no geodetic equivalent")
    lon = math.atan2(y, x)
    if rho < 1e-9:
        lat = math.copysign(math.pi / 2, z)
        return GeodeticPosition(lat, lon, abs(z) - WGS84_B)

    ep2 = WGS84_E2 / (1.0 - WGS84_E2)
    beta = math.atan2(z * WGS84_A, rho * WGS84_B)
    lat = math.atan2(
        z + ep2 * WGS84_B * math.sin(beta) ** 3,
        rho - WGS84_E2 * WGS84_A * math.cos(beta) ** 3,
    )
    for _ in range(max_iter):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        h = rho / math.cos(lat) - n if abs(lat) < math.pi / 4 else z / slat - n * (1.0 - WGS84_E2)
        new_lat = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + h)))
        done = abs(new_lat - lat) < tol
        lat = new_lat
        if done:
            break
    slat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    if abs(lat) < math.pi / 4:
        h = rho / math.cos(lat) - n
    else:
        h = z / slat - n * (1.0 - WGS84_E2)
    return GeodeticPosition(lat, lon, h)


def ned_rotation(ref: GeodeticPosition) -> np.ndarray:
    """R_ne: columns are the ECEF unit vectors of local North, East, Down."""
    slat, clat = math.sin(ref.lat), math.cos(ref.lat)
    slon, clon = math.sin(ref.lon), math.cos(ref.lon)
    return np.array(
        [
            [-slat * clon, -slon, -clat * clon],
            [-slat * slon, clon, -clat * slon],
            [clat, 0.0, -slat],
        ]
    )


class LocalFrame:
    """Fixed NED frame anchored at a geodetic origin."""

    def __init__(self, origin: GeodeticPosition):
        self.origin = GeodeticPosition(*origin)
        self.origin_ecef = lla_to_ecef(self.origin)
        self.R_ne = ned_rotation(self.origin)

    def to_ecef(self, p_ned: np.ndarray) -> np.ndarray:
        return self.origin_ecef + self.R_ne @ p_ned

    def from_ecef(self, p_ecef: np.ndarray) -> np.ndarray:
        return self.R_ne.T @ (np.asarray(p_ecef) - self.origin_ecef)

    def to_lla(self, p_ned: np.ndarray) -> GeodeticPosition:
        return ecef_to_lla(self.to_ecef(p_ned))

    def from_lla(self, p: GeodeticPosition) -> np.ndarray:
        return self.from_ecef(lla_to_ecef(p))


# --------------------------------------------------------------------------
# SO(3)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta2 = float(omega @ omega)
    theta = math.sqrt(theta2)
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal logarithm, |omega| <= pi.

    At exactly pi the axis sign is ambiguous; the returned vector has its
    largest-magnitude component positive.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = max(-1.0, min(1.0, 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)))
    w = 0.5 * vee(R - R.T)  # sin(theta) * axis
    sin_theta = float(np.linalg.norm(w))
    theta = math.atan2(sin_theta, cos_theta)
    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    if theta < math.pi - 1e-4:
        return w * (theta / sin_theta)
    # near pi: axis from the symmetric part, sign from the antisymmetric part
    B = 0.5 * (R + R.T) - cos_theta * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
    axis /= np.linalg.norm(axis)
    if sin_theta > 1e-12:
        if axis @ w < 0:
            axis = -axis
    elif axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    return theta * axis


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Jr with Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)."""
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    theta = math.sqrt(theta2)
    return (
        np.eye(3)
        - (1.0 - math.cos(theta)) / theta2 * K
        + (theta - math.sin(theta)) / (theta2 * theta) * (K @ K)
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    theta = math.sqrt(theta2)
    coeff = 1.0 / theta2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + coeff * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (SVD projection)."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-NED rotation, ZYX (yaw, pitch, roll) sequence."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def rotation_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# --------------------------------------------------------------------------
# Earth models


def sagnac_correction(sat_pos: np.ndarray, rx_pos: np.ndarray) -> float:
    """Earth-rotation range term in meters; added to the geometric range."""
    return OMEGA_EARTH * (sat_pos[0] * rx_pos[1] - sat_pos[1] * rx_pos[0]) / SPEED_OF_LIGHT


def gravity_magnitude(lat: float, h: float) -> float:
    s2 = math.sin(lat) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + _SOMIGLIANA_K * s2) / math.sqrt(1.0 - WGS84_E2 * s2)
    scale = 1.0 - 2.0 / WGS84_A * (1.0 + WGS84_F + _GRAVITY_M - 2.0 * WGS84_F * s2) * h
    scale += 3.0 * h * h / (WGS84_A * WGS84_A)
    return g0 * scale


def gravity_ned(p: GeodeticPosition) -> np.ndarray:
    return np.array([0.0, 0.0, gravity_magnitude(p.lat, p.h)])


def elevation_azimuth(rx_ecef: np.ndarray, sat_ecef: np.ndarray) -> tuple[float, float]:
    lla = ecef_to_lla(rx_ecef)
    d = ned_rotation(lla).T @ (np.asarray(sat_ecef) - np.asarray(rx_ecef))
    el = math.atan2(-d[2], math.hypot(d[0], d[1]))
    az = math.atan2(d[1], d[0])
    return el, az
