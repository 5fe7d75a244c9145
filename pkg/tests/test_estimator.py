import math
from dataclasses import replace

import numpy as np
import pytest

from jacobian_cases import FACTOR_TYPES, max_relative_error, random_case
from oracles import enu_basis
from tcfgo.estimator import EstimatorConfig, SolutionStatus
from tcfgo.estimator.baseline import run_spp
from tcfgo.estimator.pipeline import InitializationError, TightlyCoupledEstimator, leveling, run_dataset
from tcfgo.geo import ecef_to_lla, rotation_to_euler
from tcfgo.gnss import Constellation, GnssEpoch, spp_solve
from tcfgo.graph import C
from tcfgo.preint import ImuSample
from tcfgo.sim import NlosFault, OutageWindow, ProfileKind, ScenarioConfig, TrajectoryProfile, simulate

GAL = Constellation.GALILEO


def horiz(tr, a, b):
    d = tr.frame.R_ne.T @ (a - b)
    return math.hypot(d[0], d[1])


def drive(sc, config, probe=None, until=math.inf):
    """Feed a scenario epoch by epoch; probe(est) is sampled after each update."""
    est = TightlyCoupledEstimator(config)
    i, out = 0, []
    for ep in sc.gnss:
        if ep.timestamp > until:
            break
        while i < len(sc.imu) and sc.imu[i].timestamp <= ep.timestamp:
            est.process_imu(sc.imu[i])
            i += 1
        sol = est.process_gnss_epoch(ep)
        out.append((sol, probe(est) if probe and est.initialized else None))
    return est, out


@pytest.fixture(scope="module")
def benign():
    return simulate(ScenarioConfig(duration=40.0, seed=1))


@pytest.fixture(scope="module")
def benign_run(benign):
    return run_dataset(benign.imu, benign.gnss, EstimatorConfig())


@pytest.mark.parametrize("kind", FACTOR_TYPES)
def test_factor_jacobians(kind):
    rng = np.random.default_rng(7)
    for _ in range(100):
        assert max_relative_error(*random_case(kind, rng)) < 1e-5


def test_leveling():
    from tcfgo.geo import euler_to_rotation

    R = euler_to_rotation(0.1, -0.2, 2.0)
    f = R.T @ np.array([0.0, 0.0, -9.8])
    roll, pitch = leveling([ImuSample(0.0, f, np.zeros(3))])
    assert roll == pytest.approx(0.1, abs=1e-12) and pitch == pytest.approx(-0.2, abs=1e-12)


def test_moving_start_yaw():
    prof = TrajectoryProfile(ProfileKind.STRAIGHT_LINE, speed=10.0, heading=math.radians(-70.0))
    sc = simulate(ScenarioConfig(profile=prof, duration=5.0, seed=3))
    est, out = drive(sc, EstimatorConfig())
    first = next(s for s, _ in out if s.status == SolutionStatus.VALID)
    yaw = rotation_to_euler(first.state.attitude)[2]
    assert abs(yaw - math.radians(-70.0)) < math.radians(2.0)
    assert est.yaw_sigma0 == pytest.approx(EstimatorConfig().prior.yaw)


def test_static_start_leveling_and_free_yaw():

    prof = TrajectoryProfile(ProfileKind.STATIC, heading=1.0)
    sc = simulate(ScenarioConfig(profile=prof, duration=5.0, seed=4))
    est, out = drive(sc, EstimatorConfig())
    assert est.yaw_sigma0 == math.pi
    first = out[0][0]
    r, p, _ = rotation_to_euler(first.state.attitude)
    r_t, p_t, _ = rotation_to_euler(sc.truth.attitude[0])
    assert abs(r - r_t) < math.radians(0.5) and abs(p - p_t) < math.radians(0.5)


def _tdop(rx, epoch):
    g = ecef_to_lla(rx)
    E, N, U = enu_basis(g.lat, g.lon)
    G = []
    for o in epoch.observations:
        u = (o.sat_pos - rx) / np.linalg.norm(o.sat_pos - rx)
        G.append([-u @ E, -u @ N, -u @ U, 1.0])
    G = np.array(G)
    return math.sqrt(np.linalg.inv(G.T @ G)[3, 3])


def test_initial_clock_recovered():
    sc = simulate(ScenarioConfig(duration=5.0, clock_bias=500.0, seed=5))
    _, out = drive(sc, EstimatorConfig())
    sol = out[0][0]
    tr = sc.truth
    i = tr.index(sol.state.timestamp)
    # elevation weighting only tightens the fix; 5 sigma of an unweighted solve bounds it
    tol = 5 * 2.0 / math.sin(math.radians(15.0)) * _tdop(tr.ecef(i), sc.gnss[0])
    assert abs(sol.state.clock.gps_bias - tr.clock_bias[i]) < tol
    assert abs(sol.state.clock.gps_bias - 500.0) < abs(sol.state.clock.gps_bias - 3000.0)


def test_out_of_order_inputs_raise():
    est = TightlyCoupledEstimator()
    est.process_imu(ImuSample(1.0, np.zeros(3), np.zeros(3)))
    with pytest.raises(ValueError):
        est.process_imu(ImuSample(0.5, np.zeros(3), np.zeros(3)))
    with pytest.raises(ValueError):
        est.process_imu(ImuSample(1.0, np.zeros(3), np.zeros(3)))
    est.process_gnss_epoch(GnssEpoch(2.0, []))
    with pytest.raises(ValueError):
        est.process_gnss_epoch(GnssEpoch(2.0, []))


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(constellations=("GAL",))
    with pytest.raises(ValueError):
        EstimatorConfig(lag=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig(pr_sigma0=-1.0)


def test_empty_gnss_stream_reports_failure(benign):
    sols, rep = run_dataset(benign.imu, [], EstimatorConfig())
    assert sols == [] and not rep.initialized and "empty" in rep.error


def test_no_fix_within_limit_reports_failure(benign):
    starved = [GnssEpoch(e.timestamp, e.observations[:3]) for e in benign.gnss]
    sols, rep = run_dataset(benign.imu, starved, EstimatorConfig(init_max_epochs=5))
    assert not rep.initialized and "5 epochs" in rep.error
    assert all(s.status == SolutionStatus.UNAVAILABLE for s in sols)
    with pytest.raises(InitializationError):
        drive(simulate(ScenarioConfig(duration=3.0, n_satellites={"GPS": 3})), EstimatorConfig(init_max_epochs=2))


def test_causality_by_truncation(benign, benign_run):
    full, _ = benign_run
    for t_cut in (12.0, 25.0):
        imu = [s for s in benign.imu if s.timestamp <= t_cut]
        gnss = [e for e in benign.gnss if e.timestamp <= t_cut]
        trunc, _ = run_dataset(imu, gnss, EstimatorConfig())
        a, b = trunc[-1], full[len(trunc) - 1]
        assert a.state.timestamp == b.state.timestamp == t_cut
        assert np.array_equal(a.ecef, b.ecef)
        assert np.array_equal(a.state.attitude, b.state.attitude)
        assert np.array_equal(a.state.velocity, b.state.velocity)
        assert a.state.clock == b.state.clock


def test_determinism(benign, benign_run):
    again, _ = run_dataset(benign.imu, benign.gnss, EstimatorConfig())
    for a, b in zip(benign_run[0], again):
        assert np.array_equal(a.ecef, b.ecef) and np.array_equal(a.state.imu_bias, b.state.imu_bias)


def test_clock_gauge(benign, benign_run):
    shift = 1000.0
    gnss = [GnssEpoch(e.timestamp, [replace(o, pseudorange=o.pseudorange + shift) for o in e.observations])
            for e in benign.gnss]
    shifted, _ = run_dataset(benign.imu, gnss, EstimatorConfig())
    for a, b in zip(benign_run[0], shifted):
        assert np.linalg.norm(a.ecef - b.ecef) < 1e-6
        assert b.state.clock.gps_bias - a.state.clock.gps_bias == pytest.approx(shift, abs=1e-6)


def test_benign_accuracy(benign, benign_run):
    sols, rep = benign_run
    tr = benign.truth
    assert rep.valid == rep.epochs == len(benign.gnss)
    errs = [horiz(tr, s.ecef, tr.ecef(tr.index(s.state.timestamp))) for s in sols]
    spp = [horiz(tr, s.ecef, tr.ecef(tr.index(s.state.timestamp))) for s in run_spp(benign.gnss)]
    assert np.sqrt(np.mean(np.square(errs))) < np.sqrt(np.mean(np.square(spp)))


def test_clock_tracks_truth_within_3_sigma():
    sc = simulate(ScenarioConfig(duration=60.0, seed=3))
    tr = sc.truth
    _, out = drive(sc, EstimatorConfig(), lambda e: e.smoother.covariance([C(e.k)]))
    for sol, cov in out:
        i = tr.index(sol.state.timestamp)
        assert abs(sol.state.clock.gps_bias - tr.clock_bias[i]) < 3 * math.sqrt(cov[0, 0])


def test_galileo_offset_converges():
    sc = simulate(ScenarioConfig(duration=60.0, seed=2, n_satellites={"GPS": 6, "GAL": 5},
                                 inter_system_offsets={"GAL": 100.0}))
    _, out = drive(sc, EstimatorConfig(constellations=("GPS", "GAL")), lambda e: e.smoother.covariance([C(e.k)]))
    sol, cov = out[-1]
    assert abs(sol.state.clock.inter_system_offsets[GAL] - 100.0) < 3 * math.sqrt(cov[1, 1])
    assert sol.num_sats_used == {Constellation.GPS: 6, GAL: 5}


def test_outage_coasting():
    sc = simulate(ScenarioConfig(duration=40.0, seed=6, outages=[OutageWindow(15.0, 25.0)]))
    sols, rep = run_dataset(sc.imu, sc.gnss, EstimatorConfig())
    assert rep.valid == rep.epochs
    tr = sc.truth
    for s in sols:
        if 15.0 <= s.state.timestamp < 25.0:
            assert s.total_sats == 0
            assert horiz(tr, s.ecef, tr.ecef(tr.index(s.state.timestamp))) < 20.0


def test_nlos_damped_on_low_satellite():
    sc = simulate(ScenarioConfig(duration=40.0, seed=1, nlos=[NlosFault("G07", 50.0, 20.0, 30.0)]))
    tr = sc.truth
    sols, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig())
    for s, ep in zip(sols, sc.gnss):
        if 20.0 <= ep.timestamp < 30.0:
            i = tr.index(ep.timestamp)
            assert horiz(tr, s.ecef, tr.ecef(i)) < 5.0
            assert horiz(tr, spp_solve(ep, pr_sigma0=2.0).position, tr.ecef(i)) > 5.0


@pytest.mark.slow
@pytest.mark.parametrize("sat", [f"G0{k}" for k in range(1, 9)])
def test_nlos_ordering_any_satellite(sat):
    sc = simulate(ScenarioConfig(duration=40.0, seed=1, nlos=[NlosFault(sat, 50.0, 20.0, 30.0)]))
    tr = sc.truth
    sols, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig())
    spp = run_spp(sc.gnss)
    sel = [k for k, ep in enumerate(sc.gnss) if 20.0 <= ep.timestamp < 30.0]
    tc = np.mean([horiz(tr, sols[k].ecef, tr.ecef(tr.index(sc.gnss[k].timestamp))) for k in sel])
    sp = np.mean([horiz(tr, spp[k].ecef, tr.ecef(tr.index(sc.gnss[k].timestamp))) for k in sel])
    assert tc < sp


def test_divergence_recovery(benign):
    # an impossible cost ceiling forces every update to be declared diverged
    cfg = EstimatorConfig(divergence_cost=1e-30)
    sols, rep = run_dataset(benign.imu, benign.gnss[:6], cfg)
    assert rep.diverged == len(sols) == 6
    assert all(s.status == SolutionStatus.DIVERGED for s in sols)
    assert rep.recoveries >= 1


def test_divergence_freezes_last_valid(benign):
    est, out = drive(benign, EstimatorConfig(), until=5.0)
    last = out[-1][0]
    est.config.divergence_cost = 1e-30
    i = next(k for k, s in enumerate(benign.imu) if s.timestamp > 5.0)
    for s in benign.imu[i:]:
        if s.timestamp > 6.0:
            break
        est.process_imu(s)
    sol = est.process_gnss_epoch(benign.gnss[5])
    assert sol.status == SolutionStatus.DIVERGED
    assert np.array_equal(sol.state.position, last.state.position)
    est.config.divergence_cost = 1e12
    for s in benign.imu:
        if 6.0 < s.timestamp <= 7.0:
            est.process_imu(s)
    assert est.process_gnss_epoch(benign.gnss[6]).status == SolutionStatus.VALID
    assert est.recoveries == 1


@pytest.mark.slow
def test_batch_and_fixed_lag_agree_at_the_end():
    sc = simulate(ScenarioConfig(duration=120.0, seed=1))
    a, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig(lag=30.0))
    b, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig(lag=math.inf))
    assert horiz(sc.truth, a[-1].ecef, b[-1].ecef) < 0.10


@pytest.mark.slow
def test_zero_noise_bias_estimates():
    cfg = ScenarioConfig(duration=120.0, initial_accel_bias=(0.05, -0.03, 0.02),
                         initial_gyro_bias=(1e-3, -5e-4, 2e-4)).noise_free()
    sc = simulate(cfg)
    sols, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig())
    last = sols[-1]
    assert np.abs(last.state.accel_bias - cfg.initial_accel_bias).max() < 1e-4
    assert np.abs(last.state.gyro_bias - cfg.initial_gyro_bias).max() < 1e-4
    tr = sc.truth
    assert np.linalg.norm(last.ecef - tr.ecef(tr.index(last.state.timestamp))) < 1e-3


@pytest.mark.slow
def test_bounded_per_epoch_compute():
    sc = simulate(ScenarioConfig(duration=500.0, seed=8))
    sols, _ = run_dataset(sc.imu, sc.gnss, EstimatorConfig(lag=5.0))
    t = np.array([s.optimization_time for s in sols])
    # once the window is full the cost is flat: compare medians of early and late blocks
    early, late = np.median(t[50:150]), np.median(t[-100:])
    assert late < 1.5 * early
