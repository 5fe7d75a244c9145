"""Independent reference computations shared by the test modules."""

import numpy as np



def rk4_body_motion(accel, gyro, duration, steps=10000):
    """Integrate R' = R [w]x, v' = R f, p' = v from identity/rest with
    classical RK4. `accel` and `gyro` are callables of a time vector
    returning (n, 3) arrays, or equal-length lists of such callables, in
    which case all motions are integrated together and stacked results
    are returned."""
    single = callable(accel)
    accels = [accel] if single else list(accel)
    gyros = [gyro] if single else list(gyro)
    h = duration / steps
    t = np.arange(steps) * h
    nodes = np.concatenate([t, t + h / 2, t + h])
    F = np.stack([a(nodes).reshape(3, steps, 3) for a in accels], axis=2)
    W = np.stack([g(nodes).reshape(3, steps, 3) for g in gyros], axis=2)
    Wx = np.zeros(W.shape + (3,))
    Wx[..., 0, 1], Wx[..., 0, 2], Wx[..., 1, 2] = -W[..., 2], W[..., 1], -W[..., 0]
    Wx -= np.swapaxes(Wx, -1, -2)
    n = len(accels)
    R = np.tile(np.eye(3), (n, 1, 1))
    v = np.zeros((n, 3))
    p = np.zeros((n, 3))
    mv = np.einsum
    for i in range(steps):
        f0, fm, f1 = F[0, i], F[1, i], F[2, i]
        w0, wm, w1 = Wx[0, i], Wx[1, i], Wx[2, i]
        kR1, kv1, kp1 = R @ w0, mv("nij,nj->ni", R, f0), v
        R2 = R + 0.5 * h * kR1
        kR2, kv2, kp2 = R2 @ wm, mv("nij,nj->ni", R2, fm), v + 0.5 * h * kv1
        R3 = R + 0.5 * h * kR2
        kR3, kv3, kp3 = R3 @ wm, mv("nij,nj->ni", R3, fm), v + 0.5 * h * kv2
        R4 = R + h * kR3
        kR4, kv4, kp4 = R4 @ w1, mv("nij,nj->ni", R4, f1), v + h * kv3
        R = R + h / 6 * (kR1 + 2 * kR2 + 2 * kR3 + kR4)
        v = v + h / 6 * (kv1 + 2 * kv2 + 2 * kv3 + kv4)
        p = p + h / 6 * (kp1 + 2 * kp2 + 2 * kp3 + kp4)
    if single:
        return R[0], v[0], p[0]
    return R, v, p


def constant_signal(value):
    value = np.asarray(value, dtype=float)
    return lambda t: np.broadcast_to(value, (np.size(t), 3)).copy()


def vehicle_signals(rng):
    """Random smooth specific force and rate: a random constant plus three
    sinusoids per axis below 0.5 Hz, sized for ground-vehicle dynamics."""
    f_mean = np.array([0.0, 0.0, -9.8]) + rng.uniform(-2, 2, 3)
    w_mean = rng.uniform(-0.3, 0.3, 3)

    def band(amp):
        freq = rng.uniform(0.05, 0.5, (3, 3))
        phase = rng.uniform(0, 2 * np.pi, (3, 3))
        a = rng.uniform(-amp, amp, (3, 3))
        return lambda t: (a * np.sin(2 * np.pi * freq * np.asarray(t)[:, None, None] + phase)).sum(-1)

    fa, wa = band(0.2), band(0.05)
    return (lambda t: f_mean + fa(t)), (lambda t: w_mean + wa(t))


OMEGA_E = 7.2921151467e-5
C_LIGHT = 299792458.0


def enu_basis(lat, lon):
    e = np.array([-np.sin(lon), np.cos(lon), 0.0])
    n = np.array([-np.sin(lat) * np.cos(lon), -np.sin(lat) * np.sin(lon), np.cos(lat)])
    u = np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
    return e, n, u


def sky_satellites(rx_ecef, lat, lon, n, rng, min_el_deg=15.0, radius=26560e3):
    """Satellites on a sphere of `radius` at random azimuth/elevation as
    seen from rx, with random velocities of orbital magnitude."""
    e, nn, u = enu_basis(lat, lon)
    out = []
    for _ in range(n):
        el = np.radians(rng.uniform(min_el_deg, 88.0))
        az = rng.uniform(0, 2 * np.pi)
        d = np.cos(el) * np.sin(az) * e + np.cos(el) * np.cos(az) * nn + np.sin(el) * u
        # solve |rx + s d| = radius
        b = rx_ecef @ d
        s = -b + np.sqrt(b * b - (rx_ecef @ rx_ecef - radius**2))
        pos = rx_ecef + s * d
        v = np.cross(pos, rng.normal(size=3))
        v *= 3874.0 / np.linalg.norm(v)
        out.append((pos, v))
    return out


def synth_measurements(rx, rx_vel, sat_pos, sat_vel, clock_bias, clock_drift, sat_clk=0.0, sat_clkd=0.0,
                       tropo=0.0, iono=0.0):
    """Noise-free raw pseudorange and rate from first principles."""
    d = sat_pos - rx
    rng = np.linalg.norm(d)
    sagnac = OMEGA_E / C_LIGHT * (sat_pos[0] * rx[1] - sat_pos[1] * rx[0])
    u = d / rng
    pr = rng + sagnac + clock_bias + tropo + iono - sat_clk
    rate = u @ (sat_vel - rx_vel) + clock_drift - sat_clkd
    return pr, rate
