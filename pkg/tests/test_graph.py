import itertools
import math

import numpy as np
import pytest

from tcfgo.geo import so3_exp, so3_log
from tcfgo.graph import (
    BetweenFactor,
    C,
    Factor,
    FactorGraph,
    FixedLagSmoother,
    HuberLoss,
    Method,
    NonFiniteError,
    Pose,
    PriorFactor,
    RandomWalkFactor,
    SolverConfig,
    SolverError,
    VariableBlock,
    linearize,
    local,
    marginalize,
    numerical_jacobians,
    optimize,
    retract,
    sqrt_info_from_covariance,
    sqrt_info_from_sigmas,
    total_cost,
)
from tcfgo.graph.variables import P, V

GN = SolverConfig(method=Method.GAUSS_NEWTON, max_iterations=5, abs_cost_tol=1e-14, rel_cost_tol=1e-14)


def scalar_graph(n):
    g = FactorGraph()
    for i in range(n):
        g.add_variable(VariableBlock(C(i), [0.0]))
    return g


def test_total_cost_empty_graph():
    assert total_cost(FactorGraph(), {}) == 0.0


@pytest.mark.parametrize("sigma, expected", [(1.0, 4.0), (2.0, 1.0)])
def test_total_cost_single_prior(sigma, expected):
    g = scalar_graph(1)
    g.add_factor(PriorFactor(C(0), [0.0], sqrt_info_from_sigmas([sigma])))
    assert total_cost(g, {C(0): np.array([2.0])}) == pytest.approx(expected)


def test_duplicate_variable_rejected():
    g = scalar_graph(1)
    with pytest.raises(KeyError):
        g.add_variable(VariableBlock(C(0), [1.0]))


def test_factor_with_missing_key_rejected():
    g = scalar_graph(1)
    with pytest.raises(KeyError, match="clock_bias\\[3\\]"):
        g.add_factor(BetweenFactor(C(0), C(3), [1.0], np.eye(1)))


def test_factor_ids_increase():
    g = scalar_graph(2)
    ids = [g.add_factor(PriorFactor(C(i), [0.0], np.eye(1))) for i in range(2)]
    ids.append(g.add_factor(BetweenFactor(C(0), C(1), [1.0], np.eye(1))))
    assert ids == sorted(ids) and len(set(ids)) == 3


def test_chain_example():
    g = scalar_graph(2)
    g.add_factor(PriorFactor(C(0), [0.0], np.eye(1)))
    g.add_factor(BetweenFactor(C(0), C(1), [1.0], np.eye(1)))
    vals, rep = optimize(g, {C(0): np.array([0.3]), C(1): np.array([-0.2])}, GN)
    assert vals[C(0)][0] == pytest.approx(0.0, abs=1e-12)
    assert vals[C(1)][0] == pytest.approx(1.0, abs=1e-12)
    assert rep.final_cost == pytest.approx(0.0, abs=1e-20)
    assert rep.final_cost <= rep.initial_cost


def test_two_priors_midpoint():
    g = scalar_graph(1)
    g.add_factor(PriorFactor(C(0), [0.0], np.eye(1)))
    g.add_factor(PriorFactor(C(0), [2.0], np.eye(1)))
    vals, rep = optimize(g, None, GN)
    assert vals[C(0)][0] == pytest.approx(1.0)
    assert rep.final_cost == pytest.approx(2.0)


def test_linear_problem_one_gauss_newton_step():
    rng = np.random.default_rng(3)
    g = scalar_graph(4)
    for i in range(4):
        g.add_factor(PriorFactor(C(i), rng.normal(size=1), sqrt_info_from_sigmas([rng.uniform(0.5, 2)])))
    for i in range(3):
        g.add_factor(BetweenFactor(C(i), C(i + 1), rng.normal(size=1), np.eye(1)))
    one = SolverConfig(method=Method.GAUSS_NEWTON, max_iterations=1)
    v1, _ = optimize(g, None, one)
    v5, _ = optimize(g, None, GN)
    for k in v1:
        assert v1[k][0] == pytest.approx(v5[k][0], abs=1e-12)


def test_whitening_scales_jacobian_rows():
    g = scalar_graph(1)
    g.add_factor(PriorFactor(C(0), [1.0], sqrt_info_from_covariance(np.eye(1))))
    g2 = scalar_graph(1)
    g2.add_factor(PriorFactor(C(0), [1.0], sqrt_info_from_covariance(4.0 * np.eye(1))))
    x = {C(0): np.array([3.0])}
    J1 = linearize(g, x).J.toarray()
    J2 = linearize(g2, x).J.toarray()
    assert J2 == pytest.approx(0.5 * J1)


def test_gauss_newton_singular_recommends_lm():
    g = scalar_graph(2)
    g.add_factor(BetweenFactor(C(0), C(1), [1.0], np.eye(1)))  # gauge freedom
    with pytest.raises(SolverError, match="Levenberg"):
        optimize(g, None, GN)
    vals, rep = optimize(g, None, SolverConfig(method=Method.LEVENBERG_MARQUARDT))
    assert vals[C(1)][0] - vals[C(0)][0] == pytest.approx(1.0, abs=1e-6)


class _Exploding(Factor):
    def error(self, values):
        with np.errstate(invalid="ignore"):
            return np.log(values[0])


def test_non_finite_residual_identifies_factor():
    g = scalar_graph(1)
    g.add_factor(PriorFactor(C(0), [1.0], np.eye(1)))
    fid = g.add_factor(_Exploding([C(0)], np.eye(1)))
    with pytest.raises(NonFiniteError, match=f"factor {fid}"):
        linearize(g, {C(0): np.array([-1.0])})


def test_huber_cost_and_downweighting():
    g = scalar_graph(1)
    g.add_factor(PriorFactor(C(0), [0.0], np.eye(1)))
    g.add_factor(PriorFactor(C(0), [100.0], np.eye(1), loss=HuberLoss(1.345)))
    x = {C(0): np.array([0.0])}
    assert total_cost(g, x) == pytest.approx(2 * 1.345 * 100 - 1.345**2)
    vals, _ = optimize(g, None, SolverConfig(max_iterations=50))
    # L2 would give 50; Huber moves only by about k
    assert vals[C(0)][0] == pytest.approx(1.345, abs=1e-3)


def test_lm_never_increases_cost():
    rng = np.random.default_rng(0)
    g = FactorGraph()
    g.add_variable(VariableBlock(P(0), Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))))
    for _ in range(4):
        z = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
        g.add_factor(PriorFactor(P(0), z, np.eye(6)))
    vals, rep = optimize(g, None, SolverConfig(max_iterations=30))
    assert rep.final_cost <= rep.initial_cost


def test_pose_retract_local_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3) * 10)
        d = rng.uniform(-0.1, 0.1, size=6)
        assert local(x, retract(x, d)) == pytest.approx(d, abs=1e-9)
        assert local(x, retract(x, np.zeros(6))) == pytest.approx(np.zeros(6), abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_generic_factor_jacobians_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    b = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    z = Pose(so3_exp(rng.normal(size=3) * 0.3), rng.normal(size=3))
    for f, vals in [
        (PriorFactor(P(0), z, np.eye(6)), [a]),
        (BetweenFactor(P(0), P(1), z, np.eye(6)), [a, b]),
        (RandomWalkFactor(V(0), V(1), np.eye(3)), [rng.normal(size=3), rng.normal(size=3)]),
    ]:
        r, Js = f.linearize(vals)
        Jn = numerical_jacobians(f, vals)
        for J, N in zip(Js, Jn):
            assert np.abs(J - N).max() <= 1e-5 * max(1.0, np.abs(N).max())


def test_so3_problem_matches_grid_search():
    """Rotation prior + rotation between-factor on two poses with the first
    fixed tightly; minimize over the second rotation, checked by brute force."""
    R_prior = so3_exp(np.array([0.2, -0.1, 0.3]))
    R_meas = so3_exp(np.array([0.05, 0.1, -0.2]))
    R_b_prior = so3_exp(np.array([0.3, 0.1, 0.0]))
    g = FactorGraph()
    g.add_variable(VariableBlock(P(0), Pose(R_prior, np.zeros(3))))
    g.add_variable(VariableBlock(P(1), Pose(np.eye(3), np.zeros(3))))
    g.add_factor(PriorFactor(P(0), Pose(R_prior, np.zeros(3)), sqrt_info_from_sigmas([1e-6] * 6)))
    g.add_factor(BetweenFactor(P(0), P(1), Pose(R_meas, np.zeros(3)), sqrt_info_from_sigmas([0.1] * 3 + [1] * 3)))
    g.add_factor(PriorFactor(P(1), Pose(R_b_prior, np.zeros(3)), sqrt_info_from_sigmas([0.2] * 3 + [1] * 3)))
    vals, _ = optimize(g, None, SolverConfig(max_iterations=50, rel_cost_tol=1e-14, abs_cost_tol=1e-16))
    sol = so3_log(vals[P(1)].R)

    def cost(w):
        R1 = so3_exp(w)
        e1 = so3_log(R_meas.T @ R_prior.T @ R1) / 0.1
        e2 = so3_log(R_b_prior.T @ R1) / 0.2
        return e1 @ e1 + e2 @ e2

    # coarse-to-fine exhaustive grid search over tangent coordinates
    center, half = np.zeros(3), 1.0
    for _ in range(8):
        axis = np.linspace(-half, half, 21)
        best = min(
            (cost(center + np.array(d)), tuple(d)) for d in itertools.product(axis, axis, axis)
        )
        center = center + np.array(best[1])
        half /= 5.0
    assert sol == pytest.approx(center, abs=1e-3)


# --------------------------------------------------------------------------
# marginalization and fixed-lag smoothing on linear-Gaussian problems


def random_linear_problem(seed, n=12, d=2):
    """Chain with random priors, odometry and occasional skip links.

    Returns per-step lists of (variables, factors) plus a dense description
    of each factor for the oracle: (indices, A blocks, z, sqrt_info).
    """
    rng = np.random.default_rng(seed)
    steps = []
    for k in range(n):
        facs = []
        if k == 0:
            facs.append(PriorFactor(C(0), rng.normal(size=d), sqrt_info_from_sigmas(rng.uniform(0.5, 2, d))))
        else:
            facs.append(BetweenFactor(C(k - 1), C(k), rng.normal(size=d), sqrt_info_from_sigmas(rng.uniform(0.3, 2, d))))
            if rng.random() < 0.5:
                facs.append(PriorFactor(C(k), rng.normal(size=d) * 3, sqrt_info_from_sigmas(rng.uniform(1, 4, d))))
            if k >= 2 and rng.random() < 0.3:
                facs.append(BetweenFactor(C(k - 2), C(k), rng.normal(size=d), sqrt_info_from_sigmas(rng.uniform(0.5, 2, d))))
        steps.append((VariableBlock(C(k), rng.normal(size=d)), facs))
    return steps


def dense_oracle(factors, n, d):
    """Solve the linear least-squares problem directly with numpy lstsq."""
    rows, rhs = [], []
    for f in factors:
        A = np.zeros((d, n * d))
        if isinstance(f, PriorFactor):
            (k,) = f.keys
            A[:, k.epoch * d:(k.epoch + 1) * d] = np.eye(d)
            z = f.prior
        else:
            k0, k1 = f.keys
            A[:, k0.epoch * d:(k0.epoch + 1) * d] = -np.eye(d)
            A[:, k1.epoch * d:(k1.epoch + 1) * d] = np.eye(d)
            z = f.measured
        rows.append(f.sqrt_info @ A)
        rhs.append(f.sqrt_info @ z)
    x, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return x.reshape(n, d)


@pytest.mark.parametrize("seed", range(100))
def test_fixed_lag_equals_batch_on_linear_chains(seed):
    d = 2
    steps = random_linear_problem(seed, d=d)
    sm = FixedLagSmoother(lag=2.5, solver=GN)
    seen = []
    for k, (block, facs) in enumerate(steps):
        out = sm.update([block], facs, timestamps=float(k))
        seen += facs
        oracle = dense_oracle(seen, k + 1, d)
        assert out.values[C(k)] == pytest.approx(oracle[k], abs=1e-9)
        assert all(key.epoch >= k - 3 for key in out.values)


def test_infinite_lag_reproduces_batch_optimize():
    steps = random_linear_problem(7)
    sm = FixedLagSmoother(lag=math.inf, solver=GN)
    for k, (block, facs) in enumerate(steps):
        out = sm.update([block], facs, timestamps=float(k))
    g = FactorGraph()
    for block, facs in steps:
        g.add_variable(VariableBlock(block.key, block.value))
    for _, facs in steps:
        for f in facs:
            g.add_factor(f)
    vals, _ = optimize(g, None, GN)
    assert len(out.values) == len(steps)
    for k in vals:
        assert out.values[k] == pytest.approx(vals[k], abs=1e-9)


def test_marginalize_chain_x0_then_solve_matches_full():
    d = 1
    g = scalar_graph(3)
    fs = [
        PriorFactor(C(0), [1.0], sqrt_info_from_sigmas([0.5])),
        BetweenFactor(C(0), C(1), [2.0], sqrt_info_from_sigmas([1.0])),
        BetweenFactor(C(1), C(2), [-1.0], sqrt_info_from_sigmas([0.7])),
        PriorFactor(C(2), [2.5], sqrt_info_from_sigmas([2.0])),
    ]
    for f in fs:
        g.add_factor(f)
    full = dense_oracle(fs, 3, d)
    res = marginalize(g, g.initial_values(), [C(0)])
    assert C(0) not in g.variables
    assert res.prior.keys == (C(1),)
    H = res.prior.information_matrix
    assert np.abs(H - H.T).max() <= 1e-12
    vals, _ = optimize(g, None, GN)
    assert vals[C(1)][0] == pytest.approx(full[1, 0], abs=1e-9)
    assert vals[C(2)][0] == pytest.approx(full[2, 0], abs=1e-9)


def test_marginalize_isolated_variable_gives_empty_prior():
    g = scalar_graph(2)
    g.add_factor(PriorFactor(C(0), [1.0], np.eye(1)))
    g.add_factor(PriorFactor(C(1), [2.0], np.eye(1)))
    res = marginalize(g, g.initial_values(), [C(0)])
    assert res.prior is None and res.prior_id is None
    assert list(g.variables) == [C(1)] and len(g.factors) == 1


def test_marginal_prior_information_symmetric_on_random_problems():
    for seed in range(10):
        steps = random_linear_problem(seed, n=6, d=3)
        g = FactorGraph()
        for block, _ in steps:
            g.add_variable(block)
        for _, facs in steps:
            for f in facs:
                g.add_factor(f)
        res = marginalize(g, g.initial_values(), [C(0), C(1)])
        H = res.prior.information_matrix
        assert np.abs(H - H.T).max() <= 1e-12
        assert np.linalg.eigvalsh(H).min() >= -1e-9


def test_singular_marginal_block_is_regularized_with_warning():
    g = scalar_graph(2)
    # C(0) only appears in a factor with zero information about it
    f = BetweenFactor(C(1), C(1 - 1), [0.0], np.eye(1))
    f.sqrt_info = np.zeros((1, 1)) + 1e-200
    g.add_factor(PriorFactor(C(1), [0.0], np.eye(1)))
    g.add_factor(f)
    res = marginalize(g, g.initial_values(), [C(0)])
    assert res.warnings and "regularized" in res.warnings[0]


def test_smoother_rejects_out_of_order_states():
    sm = FixedLagSmoother(lag=5.0, solver=GN)
    sm.update([VariableBlock(C(0), [0.0])], [PriorFactor(C(0), [0.0], np.eye(1))], timestamps=1.0)
    with pytest.raises(ValueError):
        sm.update([VariableBlock(C(1), [0.0])], [BetweenFactor(C(0), C(1), [0.0], np.eye(1))], timestamps=0.5)
