"""Replica-symmetric scalar theory of the SK model.

Everything here is a deterministic function of (beta, h): the overlap fixed
point q, the AT and AT+ stability margins, fluctuation variances, the
Bolthausen sequences (alpha, gamma, Gamma^2) and the state-evolution
covariance.  Gaussian expectations use probabilists' Gauss-Hermite rules,
tensorized for the two-dimensional integrals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

DEFAULT_ORDER = 61
DEFAULT_KMAX = 16
LOG2 = float(np.log(2.0))


class QuadratureError(ArithmeticError):
    """Integrand evaluated to a non-finite value at a quadrature node."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, last: float, residual: float):
        super().__init__(f"{msg} (last iterate {last!r}, residual {residual!r})")
        self.last = last
        self.residual = residual


class ValidityError(ValueError):
    """Parameters fall outside the region where a formula is defined."""


class ConsistencyError(RuntimeError):
    """An internal invariant (e.g. positive semidefiniteness) failed."""


@dataclass(frozen=True)
class RsParams:
    beta: float
    h: float

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be finite and >= 0, got {self.beta!r}")
        if not np.isfinite(self.h) or self.h < 0:
            raise ValueError(f"h must be finite and >= 0, got {self.h!r}")


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=None)
def hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with sum(w * f(z)) ~= E f(Z), Z ~ N(0, 1)."""
    if order < 2:
        raise ValueError(f"quadrature order must be >= 2, got {order}")
    z, w = hermegauss(order)
    w = w / np.sqrt(2.0 * np.pi)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def _check_finite(vals: np.ndarray, nodes: np.ndarray):
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = np.unravel_index(np.flatnonzero(bad)[0], vals.shape)
        where = ", ".join(f"{nodes[i]!r}" for i in idx)
        raise QuadratureError(f"non-finite integrand at node z=({where})")


def gh_expect(f: Callable, order: int = DEFAULT_ORDER) -> float:
    """E f(Z) for a standard Gaussian Z.

    ``f`` may be vectorized; scalar-only callables are evaluated node by node.
    """
    z, w = hermite_rule(order)
    try:
        vals = np.asarray(f(z), dtype=float)
        if vals.shape != z.shape:
            vals = np.broadcast_to(vals, z.shape)
    except (TypeError, ValueError):
        vals = np.array([float(f(zi)) for zi in z])
    _check_finite(vals, z)
    return float(w @ vals)


def gh_expect2(f: Callable, order: int = DEFAULT_ORDER) -> float:
    """E f(Z, Z') for independent standard Gaussians; f must broadcast."""
    z, w = hermite_rule(order)
    vals = np.broadcast_to(np.asarray(f(z[:, None], z[None, :]), dtype=float),
                           (z.size, z.size))
    _check_finite(vals, z)
    return float(w @ vals @ w)


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LOG2


# ---------------------------------------------------------------- fixed point

def overlap_map(params: RsParams, q: float, order: int = DEFAULT_ORDER) -> float:
    """F(q) = E tanh^2(h + beta sqrt(q) Z)."""
    s = params.beta * np.sqrt(max(q, 0.0))
    return gh_expect(lambda z: np.tanh(params.h + s * z) ** 2, order)


def solve_q(params: RsParams, tol: float = 1e-13, order: int = DEFAULT_ORDER,
            damping: float = 0.5, max_iter: int = 2000) -> float:
    """Fixed point q = E tanh^2(h + beta sqrt(q) Z).

    Damped iteration from tanh^2(h); bisection on [0, 1 - 1e-12] when the
    iteration stalls.  For h = 0 the trivial root q = 0 is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if params.h == 0.0:
        return 0.0
    q = float(np.tanh(params.h) ** 2)
    for _ in range(max_iter):
        fq = overlap_map(params, q, order)
        if abs(q - fq) < tol:
            return q
        q = (1.0 - damping) * q + damping * fq
    return _bisect_q(params, tol, order)


def _bisect_q(params: RsParams, tol: float, order: int, max_iter: int = 200) -> float:
    lo, hi = 0.0, 1.0 - 1e-12
    mid, g = lo, -overlap_map(params, lo, order)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g = mid - overlap_map(params, mid, order)
        if abs(g) < tol:
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-17:
            break
    raise ConvergenceError("bisection for q did not reach tolerance", mid, abs(g))


def fourth_moment(params: RsParams, q: float, order: int = DEFAULT_ORDER) -> float:
    """q4 = E tanh^4(h + beta sqrt(q) Z)."""
    s = params.beta * np.sqrt(q)
    return gh_expect(lambda z: np.tanh(params.h + s * z) ** 4, order)


def at_condition(params: RsParams, q: float | None = None,
                 order: int = DEFAULT_ORDER) -> tuple[float, bool]:
    """(beta^2 E sech^4(h + beta sqrt(q) Z), lhs < 1)."""
    if q is None:
        q = solve_q(params, order=order)
    s = params.beta * np.sqrt(q)
    lhs = params.beta ** 2 * gh_expect(lambda z: np.cosh(params.h + s * z) ** -4.0, order)
    return lhs, bool(lhs < 1.0)


# ---------------------------------------------------------------- AT+ functional

def _inner_log_cosh(params: RsParams, q: float, q_prime: float, order: int):
    """log cosh(h + beta sqrt(q) Z + beta sqrt(q'-q) Z') on the node grid."""
    z, w = hermite_rule(order)
    a = params.h + params.beta * np.sqrt(q) * z
    b = params.beta * np.sqrt(max(q_prime - q, 0.0))
    return _log_cosh(a[:, None] + b * z[None, :]), w


def phi_functional(params: RsParams, m: float, q_prime: float, q: float | None = None,
                   order: int = DEFAULT_ORDER) -> float:
    """Phi(m, q') of the one-step replica-symmetry-breaking bound.

    The inner expectation of cosh^m is taken in log space.
    """
    if q is None:
        q = solve_q(params, order=order)
    if not 0.0 < m <= 1.0 + 1e-3:
        raise ValueError(f"m must lie in (0, 1], got {m!r}")
    if not q - 1e-15 <= q_prime <= 1.0:
        raise ValueError(f"q_prime must lie in [q, 1], got {q_prime!r}")
    beta = params.beta
    lc, w = _inner_log_cosh(params, q, q_prime, order)
    inner = logsumexp(m * lc, axis=1, b=w[None, :])
    if not np.all(np.isfinite(inner)):
        raise QuadratureError("log-space inner expectation overflowed")
    return float(LOG2 + 0.25 * beta ** 2 * (1.0 - q_prime) ** 2
                 - 0.25 * beta ** 2 * m * (q_prime ** 2 - q ** 2) + (w @ inner) / m)


def dm_phi(params: RsParams, q_prime: float, q: float | None = None,
           method: str = "analytic", step: float = 1e-5,
           order: int = DEFAULT_ORDER) -> float:
    """d Phi / dm at m = 1.

    ``analytic`` differentiates under the integral, which reduces the random
    part to E_Z KL(pi_Z || w) with pi_Z the cosh-tilted inner rule; this is
    nonnegative and free of cancellation near q' = q.  ``backward`` and
    ``central`` are finite differences in m with the given step.
    """
    if q is None:
        q = solve_q(params, order=order)
    if method == "backward":
        f1 = phi_functional(params, 1.0, q_prime, q, order)
        f0 = phi_functional(params, 1.0 - step, q_prime, q, order)
        return (f1 - f0) / step
    if method == "central":
        f1 = phi_functional(params, 1.0 + step, q_prime, q, order)
        f0 = phi_functional(params, 1.0 - step, q_prime, q, order)
        return (f1 - f0) / (2.0 * step)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    lc, w = _inner_log_cosh(params, q, q_prime, order)
    log_norm = logsumexp(lc, axis=1, b=w[None, :])
    dev = lc - log_norm[:, None]
    tilted = w[None, :] * np.exp(dev)
    kl = np.sum(tilted * dev, axis=1)
    return float(-0.25 * params.beta ** 2 * (q_prime ** 2 - q ** 2) + w @ kl)


def chebyshev_grid(q: float, grid_size: int) -> np.ndarray:
    """grid_size points on (q, 1], clustered at both ends, last point 1."""
    j = np.arange(1, grid_size + 1)
    return q + (1.0 - q) * 0.5 * (1.0 - np.cos(np.pi * j / grid_size))


def at_plus_profile(params: RsParams, grid_size: int = 64, q: float | None = None,
                    method: str = "analytic", order: int = DEFAULT_ORDER):
    """Grid q' in (q, 1] and the values -dPhi/dm(1, q') on it."""
    if grid_size < 16:
        raise ValueError("grid_size must be >= 16")
    if q is None:
        q = solve_q(params, order=order)
    grid = chebyshev_grid(q, grid_size)
    vals = np.empty_like(grid)
    for j, qp in enumerate(grid):
        try:
            d = dm_phi(params, qp, q, method=method, order=order)
        except QuadratureError as exc:
            raise QuadratureError(f"derivative failed at q'={qp!r}: {exc}") from exc
        if not np.isfinite(d):
            raise QuadratureError(f"non-finite derivative at q'={qp!r}")
        vals[j] = -d
    return grid, vals


def at_plus_margin(params: RsParams, grid_size: int = 64, q: float | None = None,
                   method: str = "analytic", order: int = DEFAULT_ORDER) -> float:
    return float(at_plus_profile(params, grid_size, q, method, order)[1].min())


# ---------------------------------------------------------------- variances

def nu_variances(params: RsParams, A: float | None = None, B: float | None = None,
                 q: float | None = None, q4: float | None = None,
                 order: int = DEFAULT_ORDER) -> tuple[float, float, float]:
    """(nu1^2, nu2^2, nu3^2) of the overlap fluctuation limit.

    A and B enter nu3^2 only; when omitted they default to nu1 and nu2, a
    placeholder choice with no authority behind it.
    """
    if q is None:
        q = solve_q(params, order=order)
    if q4 is None:
        q4 = fourth_moment(params, q, order)
    b2 = params.beta ** 2
    d1 = 1.0 - b2 * (1.0 - 2.0 * q + q4)
    d2 = 1.0 - b2 * (1.0 - 4.0 * q + 3.0 * q4)
    if d1 <= 0 or d2 <= 0:
        raise ValidityError(f"outside validity region (denominators {d1!r}, {d2!r})")
    nu1 = (1.0 - 2.0 * q + q4) / d1
    nu2 = (q - q4) / (d1 * d2)
    if A is None:
        A = np.sqrt(nu1)
    if B is None:
        B = np.sqrt(nu2)
    nu3 = ((q4 - q ** 2) + b2 * (q4 - q ** 2) * A ** 2
           + 2.0 * b2 * (2.0 * q + q ** 2 - q4) * B ** 2) / d2
    return float(nu1), float(nu2), float(nu3)


# ---------------------------------------------------------------- Bolthausen

def psi(params: RsParams, t: float, q: float, order: int = DEFAULT_ORDER) -> float:
    """psi(t) = E_Z (E_Z' tanh(h + beta sqrt(t) Z + beta sqrt(q - t) Z'))^2."""
    t = min(max(t, 0.0), q)
    z, w = hermite_rule(order)
    a = params.h + params.beta * np.sqrt(t) * z
    b = params.beta * np.sqrt(q - t)
    inner = np.tanh(a[:, None] + b * z[None, :]) @ w
    return float(w @ inner ** 2)


@dataclass(frozen=True)
class BolthausenSequences:
    q: float
    alpha: np.ndarray        # alpha_1..alpha_K
    gamma: np.ndarray        # gamma_1..gamma_K
    gamma_cap_sq: np.ndarray  # Gamma_1^2..Gamma_K^2
    truncated_at: int | None = None

    def __len__(self):
        return len(self.alpha)

    def a(self, k: int) -> float:
        return float(self.alpha[k - 1])

    def g(self, k: int) -> float:
        return float(self.gamma[k - 1])

    def G2(self, k: int) -> float:
        """Gamma_k^2, with Gamma_0^2 = 0."""
        return 0.0 if k == 0 else float(self.gamma_cap_sq[k - 1])


def bolthausen_sequences(params: RsParams, k_max: int = DEFAULT_KMAX, q: float | None = None,
                         order: int = DEFAULT_ORDER, gap_floor: float = 1e-12) -> BolthausenSequences:
    """alpha_k, gamma_k and Gamma_k^2 for k = 1..k_max.

    The recursion divides by sqrt(q - Gamma_{k-1}^2); once that gap falls
    below ``gap_floor * q`` (or the increment alpha_k - Gamma_{k-1}^2 stops
    being positive) the sequences are cut and ``truncated_at`` records the
    first missing index.  q itself and the quadrature are good to about
    1e-13, so below the default floor the increments are rounding noise.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if q is None:
        q = solve_q(params, order=order)
    g1 = gh_expect(lambda z: np.tanh(params.h + params.beta * np.sqrt(q) * z), order)
    alpha, gamma, cap = [np.sqrt(q) * g1], [g1], [g1 * g1]
    truncated = None
    for k in range(2, k_max + 1):
        gap = q - cap[-1]
        a_k = psi(params, alpha[-1], q, order)
        if gap <= gap_floor * max(q, 1e-300) or a_k - cap[-1] <= 0:
            truncated = k
            break
        g_k = (a_k - cap[-1]) / np.sqrt(gap)
        alpha.append(a_k)
        gamma.append(g_k)
        cap.append(cap[-1] + g_k * g_k)
    return BolthausenSequences(q=q, alpha=np.array(alpha), gamma=np.array(gamma),
                               gamma_cap_sq=np.array(cap), truncated_at=truncated)


@dataclass(frozen=True)
class SeCovariance:
    k: int
    entries: np.ndarray


def se_covariance(seqs: BolthausenSequences, k: int, psd_tol: float = 1e-10) -> SeCovariance:
    """K_ss = q, K_st = alpha_{min(s,t)} for s, t = 1..k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > 1 and len(seqs) < k - 1:
        raise ValueError(f"sequences only reach index {len(seqs)}, need {k - 1}")
    s = np.arange(k)
    lo = np.minimum.outer(s, s)
    K = np.where(lo < len(seqs.alpha), seqs.alpha[np.minimum(lo, len(seqs.alpha) - 1)], 0.0)
    np.fill_diagonal(K, seqs.q)
    lam = np.linalg.eigvalsh(K)[0]
    if lam < -psd_tol:
        raise ConsistencyError(f"state-evolution covariance not PSD (min eigenvalue {lam!r})")
    return SeCovariance(k=k, entries=K)


# ---------------------------------------------------------------- Sigma

@dataclass(frozen=True)
class SigmaCoefficients:
    """Sigma_{lambda_u}(x) = c0 + c2 x^2 after the inner quadratic minimum."""
    lambda_u: float
    c0: float
    c2: float
    x_max: float

    def value(self, x):
        return self.c0 + self.c2 * np.asarray(x) ** 2

    def gradient(self, x):
        return 2.0 * self.c2 * np.asarray(x)

    def hessian(self, x=0.0):
        return 2.0 * self.c2 + 0.0 * np.asarray(x)


def sigma_coefficients(params: RsParams, lambda_u: float, q: float | None = None,
                       order: int = DEFAULT_ORDER) -> SigmaCoefficients:
    if lambda_u >= 1.0:
        raise ValueError("lambda_u must be < 1")
    if q is None:
        q = solve_q(params, order=order)
    if q <= 0:
        raise ValidityError("Sigma requires q > 0")
    beta, h = params.beta, params.h
    z, w = hermite_rule(order)
    y = h + beta * np.sqrt(q) * z
    C = np.cosh(y) ** 2
    S = np.sinh(y) ** 2
    M2 = np.tanh(y) ** 2
    den = C - lambda_u
    if np.any(den <= 0):
        raise QuadratureError(f"cosh^2 - lambda_u <= 0 at node z={z[np.argmax(den <= 0)]!r}")
    b2, b4 = beta ** 2, beta ** 4
    c0 = -b2 * (1.0 - q) - lambda_u + b2 * (w @ (1.0 / den))
    quad = (2.0 * b2 * q - w @ (2.0 * b4 * q * (C + S) / den ** 2)
            + w @ (8.0 * b4 * q * C * S / den ** 3))
    lin = w @ (b2 / (C * den)) - w @ (2.0 * b2 * C * M2 / den ** 2) - 1.0
    curv = w @ (M2 / (4.0 * den))
    c2 = quad - lin ** 2 / (4.0 * curv)
    return SigmaCoefficients(lambda_u=float(lambda_u), c0=float(c0), c2=float(c2),
                             x_max=float(q ** -0.5))


def sigma_variational(params: RsParams, x: float, lambda_u: float, q: float | None = None,
                      order: int = DEFAULT_ORDER) -> float:
    """Sigma_{lambda_u}(x) for |x| <= q^{-1/2}."""
    co = sigma_coefficients(params, lambda_u, q, order)
    if abs(x) > co.x_max * (1 + 1e-12):
        raise ValueError(f"|x| must be <= q^-1/2 = {co.x_max!r}")
    return float(co.value(x))


def sigma_hessian_at_zero(params: RsParams, q: float | None = None,
                          order: int = DEFAULT_ORDER) -> float:
    """Closed form of d^2 Sigma_0 / dx^2 in terms of q and q4."""
    if q is None:
        q = solve_q(params, order=order)
    q4 = fourth_moment(params, q, order)
    b2 = params.beta ** 2
    return float(2.0 * (1.0 - b2 * (1.0 - 4.0 * q + 3.0 * q4)) / (q - q4)
                 * (-(1.0 - b2 * (1.0 - 2.0 * q + q4)) - 2.0 * b2 * (1.0 - q) * (q - q4)))


# ---------------------------------------------------------------- bundle

@dataclass(frozen=True)
class ScalarTheory:
    params: RsParams
    q: float
    q4: float
    at_lhs: float
    at_plus_margin: float
    nu1_sq: float
    nu2_sq: float
    sequences: BolthausenSequences
    quadrature_order: int = DEFAULT_ORDER
    extras: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return self.sequences.alpha

    @property
    def gamma(self):
        return self.sequences.gamma

    @property
    def gamma_cap_sq(self):
        return self.sequences.gamma_cap_sq

    def to_dict(self) -> dict:
        return {
            "beta": self.params.beta, "h": self.params.h, "q": self.q, "q4": self.q4,
            "at_lhs": self.at_lhs, "at_plus_margin": self.at_plus_margin,
            "nu1_sq": self.nu1_sq, "nu2_sq": self.nu2_sq,
            "alpha": self.alpha.tolist(), "gamma": self.gamma.tolist(),
            "gamma_cap_sq": self.gamma_cap_sq.tolist(),
            "truncated_at": self.sequences.truncated_at,
            "quadrature_order": self.quadrature_order,
        }


def scalar_theory(params: RsParams, k_max: int = DEFAULT_KMAX, order: int = DEFAULT_ORDER,
                  with_margin: bool = True) -> ScalarTheory:
    q = solve_q(params, order=order)
    q4 = fourth_moment(params, q, order)
    lhs, _ = at_condition(params, q, order)
    margin = at_plus_margin(params, q=q, order=order) if with_margin and q > 0 else float("nan")
    try:
        nu1, nu2, _ = nu_variances(params, q=q, q4=q4, order=order)
    except ValidityError:
        nu1 = nu2 = float("nan")
    seqs = bolthausen_sequences(params, k_max, q=q, order=order) if q > 0 else \
        BolthausenSequences(q=0.0, alpha=np.zeros(1), gamma=np.zeros(1), gamma_cap_sq=np.zeros(1))
    return ScalarTheory(params=params, q=q, q4=q4, at_lhs=lhs, at_plus_margin=margin,
                        nu1_sq=nu1, nu2_sq=nu2, sequences=seqs, quadrature_order=order)
