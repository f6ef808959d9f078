"""Per-instance statistics, grouped by the command that emits them.

Each ``*_statistics`` function maps one parameter point (and one disorder
seed where relevant) to a {name: float} dict.  ``REGISTRY`` lists every name
so that coverage by the CLI can be checked mechanically.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import amp, gibbs_exact, scalar_rs, spectral
from ..disorder import ConditionalState, deflate_step, sample
from .glauber import glauber_estimate

SCALAR = (
    "q", "q4", "at_lhs", "at_plus_margin", "nu1_sq", "nu2_sq", "nu3_sq", "alpha_1", "gamma_1",
    "gamma_cap_sq_last", "gamma_gap_last", "sequence_length", "sigma_hessian_closed_form",
    "sigma_hessian_assembled", "sigma_max_lambda_0p05",
)
EXACT_BASE = (
    "log_z_per_spin", "mean_energy_per_spin", "op_norm_M", "frob_sq_M", "trace_M_per_spin",
    "mean_R", "var_R", "exp_conc_proxy", "sandwich_lhs", "sandwich_rhs",
    "t12_sq", "t_mean", "cumulant3_sq", "kp_point_1_1",
    "resolvent_inverse_norm", "thm14_lhs", "thm14_rhs", "thm14_pd", "resolvent_approx_error",
    "rank_one_resolvent_residual",
    "tap_min_eig_exact", "tap_min_eig_exact_no_rank_one",
)
EXACT_CAVITY = ("prop11_residual",)
EXACT_Y = ("y_op", "y1m_op", "y2_op", "y3_op", "y4_op", "y2_frob_sq", "y_split_error")
EXACT = EXACT_BASE + EXACT_CAVITY + EXACT_Y
AMP = (
    "gram_max_dev", "zeta_proj_max_dev", "se_cov_max_dev", "w2_marginal",
    "div_conditional_tilde", "div_tilde_prime", "div_conditional_prime",
    "successive_diff_last", "q_empirical", "tap_min_eig", "tap_min_eig_no_rank_one",
    "resolvent_inverse_norm_amp", "m_closeness_exact", "m_closeness_glauber",
)
SPECTRAL = (
    "op_norm_G", "lambda_min_G", "lambda_max_G", "resolvent_h0_inverse_norm", "zeta_phi_overlap",
)
REGISTRY = {"scalar": SCALAR, "exact": EXACT, "amp": AMP, "spectral": SPECTRAL}


def _want(selected, names) -> bool:
    return not selected or any(n in selected for n in names)


@lru_cache(maxsize=256)
def theory(beta: float, h: float, k_max: int = 32) -> scalar_rs.ScalarTheory:
    return scalar_rs.scalar_theory(scalar_rs.RsParams(beta, h), k_max=k_max, with_margin=False)


def instance(beta: float, h: float, n: int, seed: int) -> gibbs_exact.SpinSystem:
    return gibbs_exact.SpinSystem(sample(n, seed).G, np.full(n, h), beta)


# ---------------------------------------------------------------- scalar

def scalar_statistics(beta: float, h: float, k_max: int = 200, selected=()) -> dict:
    p = scalar_rs.RsParams(beta, h)
    q = scalar_rs.solve_q(p)
    q4 = scalar_rs.fourth_moment(p, q)
    out = {"q": q, "q4": q4, "at_lhs": scalar_rs.at_condition(p, q)[0]}
    if q > 0:
        if _want(selected, ("at_plus_margin",)):
            out["at_plus_margin"] = scalar_rs.at_plus_margin(p, q=q)
        seqs = scalar_rs.bolthausen_sequences(p, k_max, q=q)
        out.update(alpha_1=seqs.a(1), gamma_1=seqs.g(1),
                   gamma_cap_sq_last=float(seqs.gamma_cap_sq[-1]),
                   gamma_gap_last=q - float(seqs.gamma_cap_sq[-1]),
                   sequence_length=float(len(seqs)))
        try:
            out["sigma_hessian_closed_form"] = scalar_rs.sigma_hessian_at_zero(p, q)
            out["sigma_hessian_assembled"] = scalar_rs.sigma_coefficients(p, 0.0, q).hessian()
            out["sigma_max_lambda_0p05"] = scalar_rs.sigma_coefficients(p, 0.05, q).c0
        except (scalar_rs.ValidityError, ZeroDivisionError):
            pass
    try:
        out.update(zip(("nu1_sq", "nu2_sq", "nu3_sq"), scalar_rs.nu_variances(p, q=q, q4=q4)))
    except scalar_rs.ValidityError:
        pass
    return {k: float(v) for k, v in out.items() if not selected or k in selected}


# ---------------------------------------------------------------- exact

def exact_statistics(beta: float, h: float, n: int, seed: int, selected=(), K: float = 1.0) -> dict:
    system = instance(beta, h, n, seed)
    q = theory(beta, h).q
    sol = gibbs_exact.enumerate_system(system)
    m, M, G = sol.magnetization, sol.correlation, system.g
    out = {}
    want = lambda *names: _want(selected, names)
    out["log_z_per_spin"] = sol.log_z / n
    out["mean_energy_per_spin"] = sol.mean_energy / n
    out["frob_sq_M"] = float(np.sum(M * M)) / n ** 2
    out["trace_M_per_spin"] = float(np.trace(M)) / n
    if want("op_norm_M"):
        out["op_norm_M"] = float(np.linalg.eigvalsh(M)[-1])
    if want("mean_R", "var_R", "exp_conc_proxy"):
        ov = gibbs_exact.overlap_stats(system, q, K)
        out.update(mean_R=ov.mean_R, var_R=ov.var_R, exp_conc_proxy=ov.exp_conc_proxy)
    if want("sandwich_lhs", "sandwich_rhs"):
        lhs, _, rhs = spectral.sandwich_check(sol)
        out.update(sandwich_lhs=lhs, sandwich_rhs=rhs)
    if want("t12_sq", "t_mean"):
        out["t12_sq"] = gibbs_exact.t_statistics(system, "T(1,2)^2")
        out["t_mean"] = gibbs_exact.t_statistics(system, "T()")
    if want("cumulant3_sq", "kp_point_1_1") and n >= 3:
        out["cumulant3_sq"] = gibbs_exact.cumulant(system, (0, 1, 2)) ** 2
        out["kp_point_1_1"] = gibbs_exact.kp_point(system, (0,), 1)
    if want("resolvent_inverse_norm"):
        try:
            out["resolvent_inverse_norm"] = spectral.resolvent_inverse_norm(m, q, beta, G)
        except spectral.SingularResolventError:
            out["resolvent_inverse_norm"] = float("inf")
    if want("thm14_lhs", "thm14_rhs", "thm14_pd"):
        t_lhs, t_rhs, pd = spectral.theorem_chain(sol, G, beta, q)
        out.update(thm14_lhs=t_lhs, thm14_rhs=t_rhs, thm14_pd=float(pd))
    if want("resolvent_approx_error"):
        out["resolvent_approx_error"] = spectral.resolvent_approx_error(M, G, beta)
    if want("rank_one_resolvent_residual"):
        out["rank_one_resolvent_residual"] = spectral.rank_one_resolvent_residual(sol, G, beta, q)
    for key, r1 in (("tap_min_eig_exact", True), ("tap_min_eig_exact_no_rank_one", False)):
        if want(key):
            H = spectral.tap_hessian(spectral.TapHessianSpec(m, q, beta, r1), G)
            out[key] = spectral.min_eigenvalue(H)
    if _want(selected, EXACT_CAVITY):
        R = spectral.prop11_residuals(system, sol)
        out["prop11_residual"] = float(R.sum()) / (n * (n - 1))
    if _want(selected, EXACT_Y):
        parts = spectral.residual_Y(system, G, beta, q, sol)
        norms = parts.norms()
        out.update(y_op=norms["Y"]["op"], y1m_op=norms["Y1M"]["op"], y2_op=norms["Y2"]["op"],
                   y3_op=norms["Y3"]["op"], y4_op=norms["Y4"]["op"],
                   y2_frob_sq=norms["Y2"]["fro"] ** 2, y_split_error=parts.split_error)
    return {k: float(v) for k, v in out.items() if not selected or k in selected}


# ---------------------------------------------------------------- amp

def amp_statistics(beta: float, h: float, n: int, seed: int, k_max: int = 16, selected=(),
                   glauber_sweeps: int = 0, burn_in: int = 0, variant: str = "conditional") -> dict:
    """Diagnostics of the ``variant`` trajectory; divergences always compare all three."""
    th = theory(beta, h, max(32, k_max + 1))
    d = sample(n, seed)
    trajs = {v: amp.run(amp.AmpConfig(beta, h, n, k_max, v, seed), d, th) for v in amp.VARIANTS}
    traj = trajs[variant]
    gram = amp.gram_diagnostics(traj, th)
    se = amp.state_evolution_check(traj, th)
    last = lambda a, b: float(amp.variant_divergence(trajs[a], trajs[b])[-1])
    v = traj.m(traj.k)
    out = {
        "gram_max_dev": gram.max_deviation(),
        "zeta_proj_max_dev": float(np.nanmax(gram.zeta_proj)) if np.isfinite(gram.zeta_proj).any()
        else float("nan"),
        "se_cov_max_dev": se.max_cov_deviation, "w2_marginal": se.w2,
        "div_conditional_tilde": last("conditional", "tilde"),
        "div_tilde_prime": last("tilde", "prime"),
        "div_conditional_prime": last("conditional", "prime"),
        "successive_diff_last": float(amp.successive_differences(traj)[-1]),
        "q_empirical": float(v @ v) / n,
    }
    if _want(selected, ("tap_min_eig", "tap_min_eig_no_rank_one", "resolvent_inverse_norm_amp")):
        for key, r1 in (("tap_min_eig", True), ("tap_min_eig_no_rank_one", False)):
            H = spectral.tap_hessian(spectral.TapHessianSpec(v, th.q, beta, r1), d.G)
            out[key] = spectral.min_eigenvalue(H)
        try:
            out["resolvent_inverse_norm_amp"] = spectral.resolvent_inverse_norm(v, th.q, beta, d.G)
        except spectral.SingularResolventError:
            out["resolvent_inverse_norm_amp"] = float("inf")
    if n <= gibbs_exact.ENUMERATION_CAP and _want(selected, ("m_closeness_exact",)):
        sol = gibbs_exact.enumerate_system(gibbs_exact.SpinSystem(d.G, np.full(n, h), beta))
        out["m_closeness_exact"] = amp.magnetization_closeness(traj, sol.magnetization)
    if glauber_sweeps > 0 and _want(selected, ("m_closeness_glauber",)):
        est = glauber_estimate(beta * d.G, np.full(n, h), glauber_sweeps, burn_in, seed)
        out["m_closeness_glauber"] = amp.magnetization_closeness(traj, est.m)
    return {k: float(v) for k, v in out.items() if not selected or k in selected}


# ---------------------------------------------------------------- spectral

def spectral_statistics(beta: float, h: float, n: int, seed: int, selected=()) -> dict:
    d = sample(n, seed)
    G = d.G
    lo = spectral.min_eigenvalue(G)
    hi = -spectral.min_eigenvalue(-G)
    out = {"op_norm_G": max(abs(lo), abs(hi)), "lambda_min_G": lo, "lambda_max_G": hi,
           "resolvent_h0_inverse_norm": spectral.resolvent_inverse_norm(np.zeros(n), 0.0, beta, G)}
    st = ConditionalState.start(d)
    deflate_step(st, np.full(n, 1.0 / np.sqrt(n)))
    out["zeta_phi_overlap"] = float(st.zeta[0] @ st.phi[0]) / np.sqrt(n)
    return {k: float(v) for k, v in out.items() if not selected or k in selected}
