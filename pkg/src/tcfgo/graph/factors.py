"""Factor base class and the generic factor types.

A factor exposes its *unwhitened* residual r(x) and Jacobians with respect to
the tangent-space perturbation of each of its variables. Whitening by the
square-root information and robust reweighting are applied by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..geo import right_jacobian_inv, so3_log
from .variables import Pose, Value, VariableKey, local, retract, tangent_dim

FD_STEP = 1e-6


def sqrt_info_from_sigmas(sigmas) -> np.ndarray:
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if np.any(sigmas <= 0) or not np.all(np.isfinite(sigmas)):
        raise ValueError(f"sigmas must be positive and finite, got {sigmas}")
    return np.diag(1.0 / sigmas)


def sqrt_info_from_covariance(cov: np.ndarray) -> np.ndarray:
    """W with W.T @ W = inv(cov)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance is not symmetric")
    L = np.linalg.cholesky(0.5 * (cov + cov.T))  # raises LinAlgError if not SPD
    return np.linalg.inv(L)


@dataclass(frozen=True)
class HuberLoss:
    k: float = 1.345

    def weight(self, s: np.ndarray) -> np.ndarray:
        """IRLS weight for whitened residual norms s."""
        return np.where(s <= self.k, 1.0, self.k / np.maximum(s, 1e-300))

    def cost(self, s: np.ndarray) -> np.ndarray:
        return np.where(s <= self.k, s * s, 2.0 * self.k * s - self.k * self.k)


class Factor:
    """Base factor. Subclasses implement `error`; `linearize` defaults to
    central finite differences in the tangent space."""

    def __init__(self, keys: Sequence[VariableKey], sqrt_info: np.ndarray, loss: Optional[HuberLoss] = None):
        self.keys = tuple(keys)
        self.sqrt_info = np.atleast_2d(np.asarray(sqrt_info, dtype=float))
        self.loss = loss
        if self.sqrt_info.shape[0] != self.sqrt_info.shape[1]:
            raise ValueError("sqrt_info must be square")

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]

    def error(self, values: Sequence[Value]) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, values: Sequence[Value]) -> tuple[np.ndarray, list[np.ndarray]]:
        return self.error(values), numerical_jacobians(self, values)

    @classmethod
    def linearize_many(cls, factors: Sequence["Factor"], values: Sequence[Sequence[Value]], jacobians: bool = True):
        """Stacked residuals (m, d) and per-slot Jacobians (m, d, n_k).

        Subclasses with cheap vectorized models override this; the default
        loops over `linearize`/`error`.
        """
        if not jacobians:
            return np.array([f.error(v) for f, v in zip(factors, values)]), None
        out = [f.linearize(v) for f, v in zip(factors, values)]
        R = np.array([o[0] for o in out])
        Js = [np.array([o[1][i] for o in out]) for i in range(len(factors[0].keys))]
        return R, Js

    def signature(self) -> tuple:
        """Factors with equal signatures can be linearized as one batch."""
        return (type(self), self.dim, len(self.keys))

    def __repr__(self) -> str:
        keys = ", ".join(str(k) for k in self.keys)
        return f"{type(self).__name__}({keys})"


def numerical_jacobians(factor: Factor, values: Sequence[Value], step: float = FD_STEP) -> list[np.ndarray]:
    """Central differences w.r.t. each variable's tangent perturbation.

    The step is scaled by the magnitude of the variable's coordinates.
    """
    values = list(values)
    jacs = []
    for i, v in enumerate(values):
        n = tangent_dim(v)
        scale = np.abs(v.p).max() if isinstance(v, Pose) else np.abs(v).max(initial=0.0)
        h = step * max(1.0, float(scale))
        J = np.empty((factor.dim, n))
        for j in range(n):
            d = np.zeros(n)
            d[j] = h
            vals = list(values)
            vals[i] = retract(v, d)
            r_plus = factor.error(vals)
            vals[i] = retract(v, -d)
            r_minus = factor.error(vals)
            J[:, j] = (r_plus - r_minus) / (2.0 * h)
        jacs.append(J)
    return jacs


def _local_jacobian(origin: Value, value: Value) -> np.ndarray:
    """d local(origin, value ⊞ d) / dd at d = 0."""
    if isinstance(value, Pose):
        J = np.eye(6)
        J[:3, :3] = right_jacobian_inv(so3_log(origin.R.T @ value.R))
        return J
    return np.eye(tangent_dim(value))


class PriorFactor(Factor):
    """r = value ⊟ prior."""

    def __init__(self, key: VariableKey, prior: Value, sqrt_info: np.ndarray, loss=None):
        super().__init__([key], sqrt_info, loss)
        self.prior = prior if isinstance(prior, Pose) else np.atleast_1d(np.asarray(prior, dtype=float))
        if tangent_dim(self.prior) != self.dim:
            raise ValueError("prior dimension does not match noise model")

    def error(self, values):
        return local(self.prior, values[0])

    def linearize(self, values):
        return local(self.prior, values[0]), [_local_jacobian(self.prior, values[0])]


class BetweenFactor(Factor):
    """Vector: r = (x2 - x1) - z. Pose: rotation and translation parts
    r = [Log(Zr^T R1^T R2), (p2 - p1) - zp]."""

    def __init__(self, key1, key2, measured: Value, sqrt_info, loss=None):
        super().__init__([key1, key2], sqrt_info, loss)
        self.measured = measured if isinstance(measured, Pose) else np.atleast_1d(np.asarray(measured, dtype=float))

    def error(self, values):
        a, b = values
        if isinstance(a, Pose):
            z = self.measured
            return np.concatenate([so3_log(z.R.T @ a.R.T @ b.R), b.p - a.p - z.p])
        return b - a - self.measured

    def linearize(self, values):
        a, b = values
        if isinstance(a, Pose):
            r = self.error(values)
            Jinv = right_jacobian_inv(r[:3])
            J1 = np.zeros((6, 6))
            J2 = np.zeros((6, 6))
            J1[:3, :3] = -Jinv @ b.R.T @ a.R
            J2[:3, :3] = Jinv
            J1[3:, 3:] = -np.eye(3)
            J2[3:, 3:] = np.eye(3)
            return r, [J1, J2]
        n = self.dim
        return b - a - self.measured, [-np.eye(n), np.eye(n)]


class RandomWalkFactor(BetweenFactor):
    """Discrete random walk s_{k+1} - s_k ~ N(0, Sigma)."""

    def __init__(self, key1, key2, sqrt_info, loss=None):
        super().__init__(key1, key2, np.zeros(np.atleast_2d(sqrt_info).shape[0]), sqrt_info, loss)

    @classmethod
    def linearize_many(cls, factors, values, jacobians=True):
        a = np.array([v[0] for v in values])
        b = np.array([v[1] for v in values])
        R = b - a
        if not jacobians:
            return R, None
        m, n = R.shape
        eye = np.broadcast_to(np.eye(n), (m, n, n))
        return R, [-eye, eye]


class MarginalPrior(Factor):
    """Dense Gaussian prior left by marginalization.

    Cost: d^T H d + 2 g^T d + const with d = stacked (x ⊟ x_lin). Stored as
    information_matrix H and information_vector eta = -g, so that the
    implied mean offset solves H d = eta. Internally whitened via a PSD
    square root of H, so sqrt_info is the identity.
    """

    def __init__(self, keys, linearization_point: Sequence[Value], information_matrix, information_vector,
                 rank_tol: float = 1e-14):
        H = np.asarray(information_matrix, dtype=float)
        H = 0.5 * (H + H.T)
        eta = np.asarray(information_vector, dtype=float)
        s, V = np.linalg.eigh(H)
        keep = s > rank_tol * max(float(s.max(initial=0.0)), 1e-300)
        s, V = s[keep], V[:, keep]
        root = np.sqrt(s)
        self._L = root[:, None] * V.T
        # offset c with L^T c = g = -eta (exact when g lies in range(H))
        self._c = (V.T @ (-eta)) / root
        super().__init__(keys, np.eye(len(s)))
        self.linearization_point = list(linearization_point)
        self.information_matrix = H
        self.information_vector = eta
        self._dims = [tangent_dim(v) for v in self.linearization_point]

    @property
    def rank(self) -> int:
        return self._L.shape[0]

    def signature(self) -> tuple:
        return (type(self), id(self))

    def _delta(self, values):
        return np.concatenate([local(x0, x) for x0, x in zip(self.linearization_point, values)])

    def error(self, values):
        return self._L @ self._delta(values) + self._c

    def linearize(self, values):
        r = self.error(values)
        jacs = []
        col = 0
        for x0, x, n in zip(self.linearization_point, values, self._dims):
            jacs.append(self._L[:, col:col + n] @ _local_jacobian(x0, x))
            col += n
        return r, jacs

    def mean_offset(self) -> np.ndarray:
        """Least-norm d minimizing the prior's quadratic."""
        return np.linalg.lstsq(self.information_matrix, self.information_vector, rcond=None)[0]

