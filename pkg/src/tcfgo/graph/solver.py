"""Factor graph container, linearization and Gauss-Newton / Levenberg-Marquardt."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .factors import Factor
from .variables import Value, VariableBlock, VariableKey, retract, tangent_dim

log = logging.getLogger(__name__)

Values = Dict[VariableKey, Value]


class SolverError(RuntimeError):
    pass


class NonFiniteError(SolverError):
    pass


class Method(str, enum.Enum):
    GAUSS_NEWTON = "gauss_newton"
    LEVENBERG_MARQUARDT = "levenberg_marquardt"


@dataclass
class SolverConfig:
    method: Method = Method.LEVENBERG_MARQUARDT
    max_iterations: int = 10
    abs_cost_tol: float = 1e-10
    rel_cost_tol: float = 1e-6
    lm_initial_lambda: float = 1e-6
    lm_lambda_factor: float = 10.0
    lm_max_lambda: float = 1e10

    def __post_init__(self):
        self.method = Method(self.method)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.abs_cost_tol <= 0 or self.rel_cost_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolverReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool = False
    lm_lambda: Optional[float] = None
    warnings: List[str] = field(default_factory=list)


class FactorGraph:
    def __init__(self):
        self.variables: Dict[VariableKey, VariableBlock] = {}
        self.factors: Dict[int, Factor] = {}
        self._next_factor_id = 0

    def __len__(self) -> int:
        return len(self.factors)

    def add_variable(self, block: VariableBlock) -> None:
        if block.key in self.variables:
            raise KeyError(f"duplicate variable {block.key}")
        self.variables[block.key] = block

    def add_factor(self, factor: Factor) -> int:
        missing = [k for k in factor.keys if k not in self.variables]
        if missing:
            raise KeyError(f"{factor!r} references unknown variables: {', '.join(map(str, missing))}")
        for k, block in zip(factor.keys, [self.variables[k] for k in factor.keys]):
            if block.manifold_dim == 0:
                raise ValueError(f"variable {k} has zero dimension")
        fid = self._next_factor_id
        self._next_factor_id += 1
        self.factors[fid] = factor
        return fid

    def remove_factor(self, fid: int) -> Factor:
        return self.factors.pop(fid)

    def remove_variable(self, key: VariableKey) -> None:
        users = [fid for fid, f in self.factors.items() if key in f.keys]
        if users:
            raise ValueError(f"variable {key} still used by factors {users}")
        del self.variables[key]

    def initial_values(self) -> Values:
        return {k: b.value for k, b in self.variables.items()}

    def keys(self) -> List[VariableKey]:
        return list(self.variables)


# ---------------------------------------------------------------------------
# linearization


@dataclass
class Ordering:
    keys: List[VariableKey]
    offsets: Dict[VariableKey, int]
    dims: Dict[VariableKey, int]
    size: int

    @classmethod
    def build(cls, keys: Iterable[VariableKey], values: Mapping[VariableKey, Value]) -> "Ordering":
        keys = list(keys)
        offsets, dims, off = {}, {}, 0
        for k in keys:
            n = tangent_dim(values[k])
            offsets[k], dims[k] = off, n
            off += n
        return cls(keys, offsets, dims, off)

    def slice(self, key: VariableKey) -> slice:
        o = self.offsets[key]
        return slice(o, o + self.dims[key])


def _groups(factors: Mapping[int, Factor]) -> List[List[int]]:
    groups: Dict[tuple, List[int]] = {}
    for fid, f in factors.items():
        groups.setdefault(f.signature(), []).append(fid)
    return list(groups.values())


def _evaluate_group(factors: Mapping[int, Factor], fids: Sequence[int], values: Mapping, jacobians: bool):
    fs = [factors[i] for i in fids]
    vals = [[values[k] for k in f.keys] for f in fs]
    R, Js = type(fs[0]).linearize_many(fs, vals, jacobians)
    R = np.asarray(R, dtype=float).reshape(len(fs), fs[0].dim)
    W = np.array([f.sqrt_info for f in fs])
    E = np.einsum("mij,mj->mi", W, R)
    if not np.all(np.isfinite(E)):
        bad = fids[int(np.argmin(np.all(np.isfinite(E), axis=1)))]
        raise NonFiniteError(f"non-finite residual in factor {bad}: {factors[bad]!r}")
    # robust reweighting (IRLS); cost via the loss
    s = np.linalg.norm(E, axis=1)
    cost = s * s
    sqrt_w = None
    if any(f.loss is not None for f in fs):
        sqrt_w = np.ones(len(fs))
        for i, f in enumerate(fs):
            if f.loss is not None:
                cost[i] = f.loss.cost(s[i])
                sqrt_w[i] = math.sqrt(f.loss.weight(s[i]))
        E = E * sqrt_w[:, None]
    if not jacobians:
        return E, None, cost
    WJ = []
    for J in Js:
        J = np.einsum("mij,mjk->mik", W, np.asarray(J, dtype=float))
        if sqrt_w is not None:
            J = J * sqrt_w[:, None, None]
        if not np.all(np.isfinite(J)):
            bad = fids[int(np.argmin(np.all(np.isfinite(J), axis=(1, 2))))]
            raise NonFiniteError(f"non-finite Jacobian in factor {bad}: {factors[bad]!r}")
        WJ.append(J)
    return E, WJ, cost


def factor_costs(graph: FactorGraph, values: Mapping[VariableKey, Value]) -> Dict[int, float]:
    out = {}
    for fids in _groups(graph.factors):
        _, _, cost = _evaluate_group(graph.factors, fids, values, jacobians=False)
        out.update(zip(fids, cost.tolist()))
    return {fid: out[fid] for fid in graph.factors}


def total_cost(graph: FactorGraph, values: Mapping[VariableKey, Value]) -> float:
    """Sum over factors of the (robustified) squared Mahalanobis norm."""
    total = 0.0
    for fids in _groups(graph.factors):
        _, _, cost = _evaluate_group(graph.factors, fids, values, jacobians=False)
        total += float(np.sum(cost))
    return total


@dataclass
class LinearSystem:
    """Whitened Gauss-Newton system: minimize ||J d + b||^2."""

    J: sp.csr_matrix
    b: np.ndarray
    ordering: Ordering
    cost: float


def linearize(graph: FactorGraph, values: Mapping[VariableKey, Value],
              factors: Optional[Mapping[int, Factor]] = None,
              ordering: Optional[Ordering] = None) -> LinearSystem:
    factors = graph.factors if factors is None else factors
    if ordering is None:
        ordering = Ordering.build(graph.variables, values)
    rows, cols, data, b_parts = [], [], [], []
    row0 = 0
    cost = 0.0
    for fids in _groups(factors):
        E, Js, c = _evaluate_group(factors, fids, values, jacobians=True)
        m, d = E.shape
        cost += float(np.sum(c))
        b_parts.append(E.reshape(-1))
        row_idx = row0 + np.arange(m * d).reshape(m, d)
        fs = [factors[i] for i in fids]
        for slot, J in enumerate(Js):
            n = J.shape[2]
            offs = np.array([ordering.offsets[f.keys[slot]] for f in fs])
            col_idx = offs[:, None] + np.arange(n)[None, :]  # (m, n)
            rows.append(np.broadcast_to(row_idx[:, :, None], (m, d, n)).reshape(-1))
            cols.append(np.broadcast_to(col_idx[:, None, :], (m, d, n)).reshape(-1))
            data.append(J.reshape(-1))
        row0 += m * d
    if row0 == 0:
        J = sp.csr_matrix((0, ordering.size))
        return LinearSystem(J, np.zeros(0), ordering, 0.0)
    J = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(row0, ordering.size),
    )
    return LinearSystem(J, np.concatenate(b_parts), ordering, cost)


# ---------------------------------------------------------------------------
# linear algebra


class SpdFactorization:
    """Cholesky of a sparse SPD matrix.

    Variables are permuted by reverse Cuthill-McKee; the permuted matrix is
    factored in banded form when the bandwidth is small, else densely.
    Raises numpy.linalg.LinAlgError if the matrix is not positive definite.
    """

    def __init__(self, H: sp.spmatrix):
        H = sp.csr_matrix(H)
        n = H.shape[0]
        self.n = n
        if n == 0:
            self.perm = np.zeros(0, dtype=int)
            self._banded = None
            self._dense = None
            return
        perm = reverse_cuthill_mckee(H, symmetric_mode=True).astype(int)
        Hp = H[perm][:, perm].tocoo()
        self.perm = perm
        bw = int(np.max(np.abs(Hp.row - Hp.col))) if Hp.nnz else 0
        self.bandwidth = bw
        if (bw + 1) * 4 < n:
            ab = np.zeros((bw + 1, n))
            low = Hp.row >= Hp.col
            # lower form: ab[i - j, j] = H[i, j]
            np.add.at(ab, (Hp.row[low] - Hp.col[low], Hp.col[low]), Hp.data[low])
            self._banded = sla.cholesky_banded(ab, lower=True, check_finite=False)
            self._dense = None
        else:
            self._banded = None
            self._dense = sla.cho_factor(Hp.toarray(), lower=True, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(rhs)
        rp = rhs[self.perm]
        if self._banded is not None:
            xp = sla.cho_solve_banded((self._banded, True), rp, check_finite=False)
        else:
            xp = sla.cho_solve(self._dense, rp, check_finite=False)
        x = np.empty_like(xp)
        x[self.perm] = xp
        return x

    def inverse_block(self, idx: np.ndarray) -> np.ndarray:
        E = np.zeros((self.n, len(idx)))
        E[idx, np.arange(len(idx))] = 1.0
        return self.solve(E)[idx]


def solve_normal_equations(system: LinearSystem, damping: float = 0.0) -> np.ndarray:
    H = (system.J.T @ system.J).tocsr()
    g = system.J.T @ system.b
    if damping > 0.0:
        diag = np.maximum(H.diagonal(), 1e-9)
        H = H + sp.diags(damping * diag)
    try:
        fact = SpdFactorization(H)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "normal equations are singular or indefinite; use Levenberg-Marquardt "
            "or add priors on unconstrained variables"
        ) from exc
    return fact.solve(-g)


def apply_update(values: Mapping[VariableKey, Value], ordering: Ordering, delta: np.ndarray) -> Values:
    out = dict(values)
    for k in ordering.keys:
        out[k] = retract(values[k], delta[ordering.slice(k)])
    return out


def optimize(graph: FactorGraph, initial_values: Optional[Mapping[VariableKey, Value]] = None,
             config: Optional[SolverConfig] = None) -> tuple[Values, SolverReport]:
    """Minimize total_cost by Gauss-Newton or Levenberg-Marquardt.

    The returned cost never exceeds the initial cost: uphill steps are
    rejected (LM) or terminate the iteration (GN).
    """
    config = config or SolverConfig()
    values: Values = dict(graph.initial_values() if initial_values is None else initial_values)
    missing = [k for k in graph.variables if k not in values]
    if missing:
        raise KeyError(f"no value for {', '.join(map(str, missing))}")
    ordering = Ordering.build(graph.variables, values)
    cost = total_cost(graph, values)
    if not math.isfinite(cost):
        raise NonFiniteError("initial cost is not finite")
    report = SolverReport(iterations=0, initial_cost=cost, final_cost=cost)
    lm = config.method == Method.LEVENBERG_MARQUARDT
    lam = config.lm_initial_lambda if lm else 0.0

    for it in range(config.max_iterations):
        system = linearize(graph, values, ordering=ordering)
        report.iterations = it + 1
        accepted = False
        while True:
            try:
                delta = solve_normal_equations(system, damping=lam)
            except SolverError:
                if not lm:
                    raise
                lam *= config.lm_lambda_factor
                if lam > config.lm_max_lambda:
                    break
                continue
            candidate = apply_update(values, ordering, delta)
            new_cost = total_cost(graph, candidate)
            if not math.isfinite(new_cost):
                if not lm:
                    raise NonFiniteError("cost became non-finite; try Levenberg-Marquardt")
                new_cost = math.inf
            if new_cost <= cost:
                accepted = True
                break
            if not lm:
                break
            lam *= config.lm_lambda_factor
            if lam > config.lm_max_lambda:
                break
        if not accepted:
            report.converged = True  # no descent direction left at this precision
            break
        decrease = cost - new_cost
        values, cost = candidate, new_cost
        if lm:
            lam = max(lam / config.lm_lambda_factor, 1e-12)
        if decrease <= config.abs_cost_tol or decrease <= config.rel_cost_tol * cost:
            report.converged = True
            break
    report.final_cost = cost
    report.lm_lambda = lam if lm else None
    return values, report


def marginal_covariance(graph: FactorGraph, values: Mapping[VariableKey, Value],
                        keys: Sequence[VariableKey]) -> np.ndarray:
    """Joint covariance of `keys` from the Gauss-Newton Hessian at `values`."""
    system = linearize(graph, values)
    H = (system.J.T @ system.J).tocsr()
    fact = SpdFactorization(H)
    idx = np.concatenate([np.arange(system.ordering.offsets[k], system.ordering.offsets[k] + system.ordering.dims[k])
                          for k in keys])
    return fact.inverse_block(idx)
