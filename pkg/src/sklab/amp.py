"""Bolthausen's iterative TAP solution and its state-evolution diagnostics.

Three recursions are provided:

* ``conditional``: fields built from the deflated fields zeta^(s) of the
  conditional decomposition, weighted by the Bolthausen sequences;
* ``tilde``: z = G m^(k) - beta (1 - q) m^(k-1), with m^(0) = 0;
* ``prime``: as tilde but with Onsager coefficient 1 - |m^(k)|^2 / n.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .disorder import (ConditionalState, DisorderSample, FrameDegenerateError,
                       deflate_step, gram_schmidt_next, sample)
from .scalar_rs import (DEFAULT_KMAX, RsParams, ScalarTheory, bolthausen_sequences,
                        se_covariance, solve_q)

VARIANTS = ("conditional", "tilde", "prime")


@dataclass(frozen=True)
class AmpConfig:
    beta: float
    h: float
    n: int
    k_max: int = DEFAULT_KMAX
    variant: str = "conditional"
    seed: int = 0

    def __post_init__(self):
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n < 2:
            raise ValueError("n must be >= 2")

    def same_problem(self, other: "AmpConfig") -> bool:
        return (self.beta, self.h, self.n, self.seed, self.k_max) == \
            (other.beta, other.h, other.n, other.seed, other.k_max)


@dataclass(eq=False)
class AmpTrajectory:
    config: AmpConfig
    q: float
    m_iters: list            # m^(1), ..., m^(K)
    z_iters: list            # z^(2), ..., z^(K+1)
    frame: ConditionalState | None = None
    truncated_at: int | None = None

    @property
    def k(self) -> int:
        return len(self.m_iters)

    def m(self, k: int) -> np.ndarray:
        return self.m_iters[k - 1]

    def z(self, k: int) -> np.ndarray:
        """z^(k) for k >= 2."""
        return self.z_iters[k - 2]

    @property
    def gram(self) -> np.ndarray:
        Mt = np.asarray(self.m_iters)
        return Mt @ Mt.T / self.config.n


def _theory_for(config: AmpConfig, theory: ScalarTheory | None):
    if theory is not None:
        return theory.q, theory.sequences
    params = RsParams(config.beta, config.h)
    q = solve_q(params)
    return q, bolthausen_sequences(params, config.k_max + 1, q=q)


def run(config: AmpConfig, disorder: DisorderSample | None = None,
        theory: ScalarTheory | None = None, track_w: bool = False) -> AmpTrajectory:
    if disorder is None:
        disorder = sample(config.n, config.seed)
    if disorder.n != config.n:
        raise ValueError("disorder size does not match config")
    q, seqs = _theory_for(config, theory)
    n, beta, h = config.n, config.beta, config.h
    m1 = np.full(n, np.sqrt(q))
    if config.variant == "conditional":
        return _run_conditional(config, disorder, q, seqs, m1, track_w)
    G = disorder.G
    ms, zs = [m1], []
    prev = np.zeros(n)
    for k in range(1, config.k_max + 1):
        cur = ms[-1]
        if config.variant == "tilde":
            onsager = 1.0 - q
        else:
            onsager = 1.0 - cur @ cur / n
        z = G @ cur - beta * onsager * prev
        zs.append(z)
        if k < config.k_max:
            ms.append(np.tanh(h + beta * z))
        prev = cur
    return AmpTrajectory(config=config, q=q, m_iters=ms, z_iters=zs)


def _run_conditional(config, disorder, q, seqs, m1, track_w):
    n, beta, h = config.n, config.beta, config.h
    state = ConditionalState.start(disorder, track_w=track_w)
    ms, zs = [m1], []
    truncated = None
    for k in range(1, config.k_max + 1):
        # needs gamma_1..gamma_{k-1} and Gamma_{k-1}^2
        if k - 1 > len(seqs):
            truncated = k
            break
        try:
            phi = gram_schmidt_next(ms[-1], state.phi)
        except FrameDegenerateError:
            truncated = k
            break
        deflate_step(state, phi)
        gap = q - seqs.G2(k - 1)
        z = np.sqrt(max(gap, 0.0)) * state.zeta[k - 1]
        for s in range(1, k):
            z += seqs.g(s) * state.zeta[s - 1]
        zs.append(z)
        if k < config.k_max:
            ms.append(np.tanh(h + beta * z))
    if truncated is not None:
        ms = ms[:len(zs)]
    return AmpTrajectory(config=config, q=q, m_iters=ms, z_iters=zs, frame=state,
                         truncated_at=truncated)


# ---------------------------------------------------------------- diagnostics

@dataclass
class GramReport:
    """Absolute deviations of overlap statistics from their scalar limits.

    ``overlap``[k, s] = |n^-1 (m^k, m^s) - alpha_s| for s < k,
    ``norm``[k] = |n^-1 |m^k|^2 - q|,
    ``phi_proj``[k, s] = |n^-1/2 (m^k, phi^s) - gamma_s| for s < k,
    ``phi_diag``[k] = |n^-1/2 (m^k, phi^k) - sqrt(q - Gamma_{k-1}^2)|,
    ``zeta_proj``[k, s]: deviation of n^-1 (zeta^s, m^{k+1}) from beta (1-q) gamma_s
    (or beta (1-q) sqrt(q - Gamma_{k-1}^2) at s = k); recorded, not asserted.
    Zeta has O(1) entries, so 1/n is the normalization that gives an O(1) limit.
    Row/column index 0 stands for iterate 1; unused entries are NaN.
    """
    overlap: np.ndarray
    norm: np.ndarray
    phi_proj: np.ndarray
    phi_diag: np.ndarray
    zeta_proj: np.ndarray

    def max_deviation(self) -> float:
        parts = [self.overlap, self.norm, self.phi_proj, self.phi_diag]
        return float(max(np.nanmax(p) if np.isfinite(p).any() else 0.0 for p in parts))

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(x) else float(x) for x in np.ravel(a)] \
                if a.ndim == 1 else [clean(r) for r in a]
        return {"overlap": clean(self.overlap), "norm": clean(self.norm),
                "phi_proj": clean(self.phi_proj), "phi_diag": clean(self.phi_diag),
                "zeta_proj": clean(self.zeta_proj), "max_deviation": self.max_deviation()}


def gram_diagnostics(traj: AmpTrajectory, theory: ScalarTheory | None = None) -> GramReport:
    q, seqs = _theory_for(traj.config, theory)
    n, K = traj.config.n, traj.k
    beta = traj.config.beta
    gram = traj.gram
    overlap = np.full((K, K), np.nan)
    phi_proj = np.full((K, K), np.nan)
    zeta_proj = np.full((K, K), np.nan)
    phi_diag = np.full(K, np.nan)
    norm = np.abs(np.diag(gram) - q)
    frame = traj.frame
    rn = np.sqrt(n)
    for k in range(1, K + 1):
        for s in range(1, min(k, len(seqs) + 1)):
            overlap[k - 1, s - 1] = abs(gram[k - 1, s - 1] - seqs.a(s))
        if frame is None or k > len(frame.phi):
            continue
        m = traj.m(k)
        for s in range(1, min(k, len(seqs) + 1)):
            phi_proj[k - 1, s - 1] = abs(m @ frame.phi[s - 1] / rn - seqs.g(s))
        if k - 1 <= len(seqs):
            phi_diag[k - 1] = abs(m @ frame.phi[k - 1] / rn - np.sqrt(max(q - seqs.G2(k - 1), 0.0)))
        if k < K:
            m_next = traj.m(k + 1)
            for s in range(1, k + 1):
                if s < k and s <= len(seqs):
                    target = beta * (1 - q) * seqs.g(s)
                elif s == k and k - 1 <= len(seqs):
                    target = beta * (1 - q) * np.sqrt(max(q - seqs.G2(k - 1), 0.0))
                else:
                    continue
                zeta_proj[k - 1, s - 1] = abs(frame.zeta[s - 1] @ m_next / n - target)
    return GramReport(overlap=overlap, norm=norm, phi_proj=phi_proj, phi_diag=phi_diag,
                      zeta_proj=zeta_proj)


def tanh_marginal_quantiles(beta: float, h: float, q: float, n: int) -> np.ndarray:
    """Quantiles of tanh(h + beta sqrt(q) Z) at the midpoints (i - 1/2)/n."""
    u = (np.arange(1, n + 1) - 0.5) / n
    return np.tanh(h + beta * np.sqrt(q) * ndtri(u))


def wasserstein2_marginal(values: np.ndarray, beta: float, h: float, q: float) -> float:
    """1-D W2 between the empirical law of ``values`` and tanh(h + beta sqrt(q) Z)."""
    x = np.sort(np.asarray(values, dtype=float))
    target = tanh_marginal_quantiles(beta, h, q, x.size)
    return float(np.sqrt(np.mean((x - target) ** 2)))


@dataclass
class StateEvolutionReport:
    covariance: np.ndarray   # n^-1 (z^(s+1), z^(t+1)), s, t = 1..k
    K: np.ndarray
    max_cov_deviation: float
    w2: float
    w2_iterate: int

    def to_dict(self) -> dict:
        return {"covariance": self.covariance.tolist(), "K": self.K.tolist(),
                "max_cov_deviation": self.max_cov_deviation, "w2": self.w2,
                "w2_iterate": self.w2_iterate}


def state_evolution_check(traj: AmpTrajectory, theory: ScalarTheory | None = None,
                          k: int | None = None) -> StateEvolutionReport:
    """Compare empirical second moments of z^(2..k+1) with K and the m^(k) marginal."""
    q, seqs = _theory_for(traj.config, theory)
    k = traj.k if k is None else k
    if k < 2:
        raise ValueError("state-evolution check needs k >= 2")
    k = min(k, len(traj.z_iters))
    Z = np.asarray(traj.z_iters[:k])
    cov = Z @ Z.T / traj.config.n
    K = se_covariance(seqs, k).entries
    w2 = wasserstein2_marginal(traj.m(min(k, traj.k)), traj.config.beta, traj.config.h, q)
    return StateEvolutionReport(covariance=cov, K=K,
                                max_cov_deviation=float(np.abs(cov - K).max()),
                                w2=w2, w2_iterate=min(k, traj.k))


def variant_divergence(a: AmpTrajectory, b: AmpTrajectory) -> np.ndarray:
    """n^-1 |m_a^(k) - m_b^(k)|^2 for k = 1..K."""
    if not a.config.same_problem(b.config):
        raise ValueError("trajectories come from different (beta, h, n, seed, k_max)")
    K = min(a.k, b.k)
    n = a.config.n
    return np.array([np.sum((a.m(k) - b.m(k)) ** 2) / n for k in range(1, K + 1)])


def magnetization_closeness(traj: AmpTrajectory, m_ref: np.ndarray,
                            k: int | None = None) -> float:
    """n^-1 |m_ref - m^(k)|^2 (k defaults to the last iterate)."""
    m_ref = np.asarray(m_ref, dtype=float)
    if m_ref.shape != (traj.config.n,):
        raise ValueError(f"reference has shape {m_ref.shape}, expected ({traj.config.n},)")
    k = traj.k if k is None else k
    return float(np.sum((m_ref - traj.m(k)) ** 2) / traj.config.n)


def successive_differences(traj: AmpTrajectory) -> np.ndarray:
    """n^-1 |m^(k) - m^(k-1)|^2 for k = 2..K."""
    return np.array([np.sum((traj.m(k) - traj.m(k - 1)) ** 2) / traj.config.n
                     for k in range(2, traj.k + 1)])


def trajectory_summary(traj: AmpTrajectory, theory: ScalarTheory | None = None,
                       divergences: dict | None = None) -> dict:
    out = {"config": traj.config.__dict__.copy(), "q": traj.q, "k": traj.k,
           "truncated_at": traj.truncated_at}
    if traj.frame is not None:
        out["gram"] = gram_diagnostics(traj, theory).to_dict()
    if traj.k >= 2:
        out["state_evolution"] = state_evolution_check(traj, theory).to_dict()
    if divergences:
        out["divergence"] = {k: np.asarray(v).tolist() for k, v in divergences.items()}
    return out


def trajectory_json(traj: AmpTrajectory, theory: ScalarTheory | None = None,
                    divergences: dict | None = None) -> str:
    return json.dumps(trajectory_summary(traj, theory, divergences), sort_keys=True)
