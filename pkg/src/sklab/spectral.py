"""Operator norms, extremal eigenvalues and the residual matrices around M.

The central objects are

    A = D + beta^2 (1 - q) - beta G,   D = diag(1 / (1 - m_i^2)),
    Y = A M - Id = Y1 M + Y2 - Y3 - Y4,

and the TAP Hessian D_v + beta^2 (1 - q) - (2 beta^2 / n) v v^T - beta G.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal, lu_factor, lu_solve

from .gibbs_exact import GibbsSolution, SpinSystem, cavity, enumerate_system, site_decomposition

DENSE_LIMIT = 500
LANCZOS_MAX = 800


class ConvergenceWarning(RuntimeWarning):
    pass


class SymmetryError(ValueError):
    pass


class SingularResolventError(ArithmeticError):
    def __init__(self, estimate: float):
        super().__init__(f"operator is numerically singular: min |eigenvalue| ~ {estimate!r}")
        self.estimate = estimate


def _start_vector(n: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- iterative solvers

def power_iteration(matvec: Callable, n: int, tol: float = 1e-8, max_iter: int = 100_000,
                    seed: int = 0) -> tuple[float, np.ndarray, bool, int]:
    """Dominant eigenvalue of a symmetric positive semidefinite operator.

    Stops once the eigen-residual |A v - lam v| is below tol * lam, which
    bounds the eigenvalue error by roughly residual^2 / gap.
    Returns (Rayleigh quotient, unit vector, converged, iterations).
    """
    v = _start_vector(n, seed)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = matvec(v)
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * abs(lam) or lam == 0.0:
            return lam, v, True, it
        v = w / np.linalg.norm(w)
    return lam, v, False, max_iter


def lanczos_extremes(matvec: Callable, n: int, tol: float = 1e-10, max_iter: int = LANCZOS_MAX,
                     seed: int = 0, check_every: int = 5) -> tuple[float, float, bool, int]:
    """(lambda_min, lambda_max, converged, steps) of a symmetric operator.

    Full reorthogonalization; convergence when both extreme Ritz residual
    bounds fall under tol times the spectral scale.
    """
    max_iter = min(max_iter, n)
    V = np.empty((max_iter + 1, n))
    V[0] = _start_vector(n, seed)
    alpha, beta = [], []
    lo = hi = 0.0
    for j in range(max_iter):
        w = matvec(V[j])
        a = float(V[j] @ w)
        w -= a * V[j]
        if j > 0:
            w -= beta[-1] * V[j - 1]
        Vj = V[:j + 1]
        w -= Vj.T @ (Vj @ w)
        w -= Vj.T @ (Vj @ w)
        b = float(np.linalg.norm(w))
        alpha.append(a)
        done = (j + 1) % check_every == 0 or j + 1 == max_iter or b == 0.0
        if done:
            if j == 0:
                theta, S = np.array([a]), np.ones((1, 1))
            else:
                theta, S = eigh_tridiagonal(np.array(alpha), np.array(beta))
            lo, hi = float(theta[0]), float(theta[-1])
            scale = max(abs(lo), abs(hi), 1e-300)
            if b == 0.0 or (abs(b * S[-1, 0]) <= tol * scale and abs(b * S[-1, -1]) <= tol * scale):
                return lo, hi, True, j + 1
        if b == 0.0:
            break
        beta.append(b)
        V[j + 1] = w / b
    return lo, hi, max_iter >= n, max_iter


def _check_symmetric(A: np.ndarray, tol: float = 1e-10):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SymmetryError("expected a square matrix")
    scale = max(1.0, float(np.abs(A).max()) if A.size else 1.0)
    if np.abs(A - A.T).max(initial=0.0) > tol * scale:
        raise SymmetryError("matrix is not symmetric within tolerance")


def operator_norm(A: np.ndarray, tol: float = 1e-8, method: str = "auto", seed: int = 0,
                  max_iter: int = 100_000) -> float:
    """Largest singular value of A.

    ``power`` runs power iteration on A^T A from a seeded start; ``lanczos``
    uses Lanczos (on A if symmetric, else on A^T A); ``dense`` uses LAPACK.
    A ConvergenceWarning is issued when an iterative method hits its cap.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[1]
    symmetric = A.shape[0] == A.shape[1] and np.array_equal(A, A.T)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        if symmetric:
            return float(np.abs(np.linalg.eigvalsh(A)).max(initial=0.0))
        return float(np.linalg.norm(A, 2))
    if method == "power":
        val, _, ok, _ = power_iteration(lambda x: A.T @ (A @ x), n, tol, max_iter, seed)
        if not ok:
            warnings.warn("power iteration hit its iteration cap", ConvergenceWarning, stacklevel=2)
        return float(np.sqrt(max(val, 0.0)))
    if method == "lanczos":
        if symmetric:
            lo, hi, ok, _ = lanczos_extremes(lambda x: A @ x, n, tol, seed=seed)
            val = max(abs(lo), abs(hi))
        else:
            lo, hi, ok, _ = lanczos_extremes(lambda x: A.T @ (A @ x), n, tol, seed=seed)
            val = np.sqrt(max(hi, 0.0))
        if not ok:
            warnings.warn("Lanczos did not converge", ConvergenceWarning, stacklevel=2)
        return float(val)
    raise ValueError(f"unknown method {method!r}")


def min_eigenvalue(A: np.ndarray, tol: float = 1e-10, method: str = "auto", seed: int = 0) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    A = np.asarray(A, dtype=float)
    _check_symmetric(A)
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        return float(np.linalg.eigvalsh(A)[0])
    if method == "lanczos":
        lo, _, ok, _ = lanczos_extremes(lambda x: A @ x, n, tol, seed=seed)
        if not ok:
            return float(np.linalg.eigvalsh(A)[0])
        return lo
    if method == "power":
        shift = float(np.max(np.diag(A) + np.abs(A).sum(axis=1) - np.abs(np.diag(A))))
        val, _, ok, _ = power_iteration(lambda x: shift * x - A @ x, n, tol, seed=seed)
        if not ok:
            warnings.warn("shifted power iteration hit its cap", ConvergenceWarning, stacklevel=2)
        return shift - val
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- assembled operators

@dataclass(frozen=True, eq=False)
class TapHessianSpec:
    v: np.ndarray
    q: float
    beta: float
    include_rank_one: bool = True

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if np.any(np.abs(v) >= 1):
            raise ValueError("all |v_i| must be < 1")
        object.__setattr__(self, "v", v)


def tap_hessian(spec: TapHessianSpec, G: np.ndarray) -> np.ndarray:
    """D_v + beta^2 (1 - q) - [(2 beta^2 / n) v v^T] - beta G."""
    v = spec.v
    n = v.size
    if G.shape != (n, n):
        raise ValueError("G does not match v")
    H = -spec.beta * G
    H[np.diag_indices(n)] += 1.0 / (1.0 - v * v) + spec.beta ** 2 * (1.0 - spec.q)
    if spec.include_rank_one:
        H -= (2.0 * spec.beta ** 2 / n) * np.outer(v, v)
    return H


def resolvent_operator(m_vec: np.ndarray, q: float, beta: float, G: np.ndarray) -> np.ndarray:
    """D + beta^2 (1 - q) - beta G with D = diag(1 / (1 - m_i^2))."""
    return tap_hessian(TapHessianSpec(m_vec, q, beta, include_rank_one=False), G)


def resolvent_inverse_norm(m_vec: np.ndarray, q: float, beta: float, G: np.ndarray,
                           singular_tol: float = 1e-10, dense_limit: int = 2000) -> float:
    """|(D + beta^2 (1 - q) - beta G)^{-1}|_op = 1 / min |eigenvalue|."""
    A = resolvent_operator(m_vec, q, beta, G)
    n = A.shape[0]
    if n <= dense_limit:
        gap = float(np.abs(np.linalg.eigvalsh(A)).min())
    else:
        lo, _, ok, _ = lanczos_extremes(lambda x: A @ x, n, 1e-10)
        if ok and lo > 0:
            gap = lo
        else:
            lu = lu_factor(A)
            # the dominant eigenvalue of A^{-1} is 1 / min |eig A|
            lo_i, hi_i, ok_i, _ = lanczos_extremes(lambda x: lu_solve(lu, x), n, 1e-10)
            if not ok_i:
                warnings.warn("inverse Lanczos did not converge", ConvergenceWarning, stacklevel=2)
            gap = 1.0 / max(abs(lo_i), abs(hi_i))
    if gap < singular_tol:
        raise SingularResolventError(gap)
    return 1.0 / gap


def resolvent_approx_error(M_exact: np.ndarray, G: np.ndarray, beta: float) -> float:
    """|M - (1 + beta^2 - beta G)^{-1}|_op (the h = 0 resolvent approximation)."""
    n = G.shape[0]
    A = (1.0 + beta ** 2) * np.eye(n) - beta * G
    lam = np.linalg.eigvalsh(A)
    if np.abs(lam).min() < 1e-10:
        raise SingularResolventError(float(np.abs(lam).min()))
    R = np.linalg.solve(A, np.eye(n))
    return float(np.abs(np.linalg.eigvalsh(M_exact - 0.5 * (R + R.T))).max())


# ---------------------------------------------------------------- residual Y

@dataclass(eq=False)
class ResidualParts:
    Y: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Y3: np.ndarray
    Y4: np.ndarray
    M: np.ndarray

    @property
    def split_error(self) -> float:
        """Frobenius norm of Y - (Y1 M + Y2 - Y3 - Y4)."""
        return float(np.linalg.norm(self.Y - (self.Y1 @ self.M + self.Y2 - self.Y3 - self.Y4)))

    def norms(self) -> dict:
        parts = {"Y": self.Y, "Y1M": self.Y1 @ self.M, "Y2": self.Y2, "Y3": self.Y3, "Y4": self.Y4}
        return {k: {"op": operator_norm(v, method="dense"), "fro": float(np.linalg.norm(v))}
                for k, v in parts.items()}


def _check_match(system: SpinSystem, G: np.ndarray, beta: float,
                 solution: GibbsSolution | None):
    if G.shape != (system.n, system.n) or not np.array_equal(G, system.g) \
            or beta != system.beta:
        raise ValueError("disorder G / beta do not match the spin system")
    if solution is not None and solution.n != system.n:
        raise ValueError("exact solution does not match the spin system")


def residual_Y(system: SpinSystem, G: np.ndarray, beta: float, q: float,
               solution: GibbsSolution | None = None) -> ResidualParts:
    """Y = (D + beta^2 (1 - q) - beta G) M - Id and its four-part split."""
    _check_match(system, G, beta, solution)
    sol = enumerate_system(system) if solution is None else solution
    n = system.n
    m, M = sol.magnetization, sol.correlation
    Y = resolvent_operator(m, q, beta, G) @ M - np.eye(n)
    Y1 = np.zeros((n, n))
    Y2 = np.zeros((n, n))
    Y3 = np.zeros((n, n))
    Y4 = np.zeros((n, n))
    b2 = beta ** 2
    for i in range(n):
        dec = site_decomposition(system, i)
        others = dec.sites
        gi = G[i, others]
        Y1[i, i] = b2 * (1.0 - q) - beta * gi @ dec.delta_m
        Y2[i, others] = M[i, others] / (1.0 - m[i] ** 2) - beta * gi @ dec.cavity_M
        Y3[i, others] = beta * gi @ dec.Delta_M
        Y4[i, others] = beta * m[i] * (gi @ dec.delta_M)
    return ResidualParts(Y=Y, Y1=Y1, Y2=Y2, Y3=Y3, Y4=Y4, M=M)


def prop11_residuals(system: SpinSystem, solution: GibbsSolution | None = None) -> np.ndarray:
    """Matrix of (m_ij - beta (1 - m_i^2) sum_k g_ik m^(i)_kj)^2, zero on the diagonal.

    Only cavity correlations are needed, so this is n enumerations of n - 1 spins.
    """
    sol = enumerate_system(system) if solution is None else solution
    n = system.n
    m, M = sol.magnetization, sol.correlation
    R = np.zeros((n, n))
    for i in range(n):
        others = np.delete(np.arange(n), i)
        Mi = enumerate_system(cavity(system, i)).correlation
        pred = system.beta * (1.0 - m[i] ** 2) * (system.g[i, others] @ Mi)
        R[i, others] = (M[i, others] - pred) ** 2
    return R


def sandwich_check(solution: GibbsSolution) -> tuple[float, float, float]:
    """(n^-2 |M|^2, Var R from M and m, n^-1 (|M|^2 + 2 |M|)) with op norms."""
    M, m = solution.correlation, solution.magnetization
    n = m.size
    op = float(np.linalg.eigvalsh(M)[-1])
    mid = (np.sum(M * M) + 2.0 * m @ M @ m) / n ** 2
    return op ** 2 / n ** 2, float(mid), (op ** 2 + 2.0 * op) / n


def theorem_chain(solution: GibbsSolution, G: np.ndarray, beta: float, q: float
                  ) -> tuple[float, float, bool]:
    """(|M|, |A^-1| (1 + |Y|), A positive definite) with A = D + beta^2(1-q) - beta G."""
    m, M = solution.magnetization, solution.correlation
    A = resolvent_operator(m, q, beta, G)
    lam = np.linalg.eigvalsh(A)
    Y = A @ M - np.eye(m.size)
    lhs = float(np.linalg.eigvalsh(M)[-1])
    rhs = (1.0 / float(np.abs(lam).min())) * (1.0 + float(np.linalg.norm(Y, 2)))
    return lhs, rhs, bool(lam[0] > 0)


def rank_one_resolvent_residual(solution: GibbsSolution, G: np.ndarray, beta: float, q: float) -> float:
    """|(D + beta^2(1-q) - 2 beta^2/n m m^T - beta G) M - Id|_op; diagnostic only."""
    m, M = solution.magnetization, solution.correlation
    A = tap_hessian(TapHessianSpec(m, q, beta, True), G)
    return float(np.linalg.norm(A @ M - np.eye(m.size), 2))


@dataclass
class SpectralReport:
    op_norm_M: float = float("nan")
    op_norm_resolvent_inverse: float = float("nan")
    min_eig_tap_hessian: float = float("nan")
    residual_norms: dict = field(default_factory=dict)
    sandwich_check: tuple = (float("nan"),) * 3

    def to_json(self) -> str:
        d = asdict(self)
        d["sandwich_check"] = list(self.sandwich_check)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SpectralReport":
        d = json.loads(text)
        d["sandwich_check"] = tuple(d["sandwich_check"])
        return cls(**d)


def spectral_report(system: SpinSystem, q: float) -> SpectralReport:
    """All finite-n spectral quantities of one enumerable instance."""
    sol = enumerate_system(system)
    G, beta = system.g, system.beta
    parts = residual_Y(system, G, beta, q, sol)
    try:
        inv = resolvent_inverse_norm(sol.magnetization, q, beta, G)
    except SingularResolventError:
        inv = float("inf")
    H = tap_hessian(TapHessianSpec(sol.magnetization, q, beta), G)
    return SpectralReport(
        op_norm_M=float(np.linalg.eigvalsh(sol.correlation)[-1]),
        op_norm_resolvent_inverse=inv,
        min_eig_tap_hessian=min_eigenvalue(H),
        residual_norms={k: v["op"] for k, v in parts.norms().items()},
        sandwich_check=sandwich_check(sol))
