import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from sklab import scalar_rs as rs
from sklab.scalar_rs import RsParams

SQRT2PI = math.sqrt(2 * math.pi)


def quad_expect(f, lim=12.0):
    """E f(Z) by adaptive quadrature (independent of the Hermite rule)."""
    val, _ = integrate.quad(lambda z: f(z) * math.exp(-z * z / 2) / SQRT2PI, -lim, lim,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def q_by_bisection(beta, h):
    g = lambda q: q - quad_expect(lambda z: math.tanh(h + beta * math.sqrt(q) * z) ** 2)
    return optimize.brentq(g, 0.0, 1.0 - 1e-12, xtol=1e-15, rtol=1e-15)


# ---------------------------------------------------------------- quadrature

def test_gh_normalization_and_variance():
    assert rs.gh_expect(lambda z: np.ones_like(z), 20) == pytest.approx(1.0, abs=1e-14)
    assert rs.gh_expect(lambda z: z ** 2, 20) == pytest.approx(1.0, abs=1e-12)


def test_gh_against_adaptive_oracle():
    f = lambda z: np.tanh(0.5 + 0.3 * z) ** 2
    oracle, _ = integrate.quad(lambda z: f(z) * math.exp(-z * z / 2) / SQRT2PI, -10, 10,
                               epsabs=1e-14, epsrel=1e-14)
    assert abs(rs.gh_expect(f, 40) - oracle) < 1e-10


def test_gh_scalar_callable_and_nonfinite_node():
    assert rs.gh_expect(lambda z: math.cos(z), 30) == pytest.approx(math.exp(-0.5), abs=1e-12)
    with pytest.raises(rs.QuadratureError, match="node"):
        rs.gh_expect(lambda z: np.where(z == z[0], np.inf, 0.0), 10)


def test_gh_expect2_product():
    v = rs.gh_expect2(lambda a, b: (a * b) ** 2, 20)
    assert v == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- q

def test_q_at_zero_beta():
    assert rs.solve_q(RsParams(0.0, 1.0)) == pytest.approx(math.tanh(1.0) ** 2, abs=1e-14)


def test_q_at_zero_field():
    assert rs.solve_q(RsParams(0.7, 0.0)) == 0.0


def test_q_low_temperature_against_bisection():
    q = rs.solve_q(RsParams(1.2, 0.3))
    assert abs(q - q_by_bisection(1.2, 0.3)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0.05, 3.0))
def test_q_fixed_point_residual(beta, h):
    p = RsParams(beta, h)
    q = rs.solve_q(p, tol=1e-12)
    assert abs(q - rs.overlap_map(p, q)) < 1e-12
    assert 0.0 < q < 1.0


def test_solve_q_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        rs.solve_q(RsParams(0.5, 0.5), tol=0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        RsParams(-0.1, 0.5)
    with pytest.raises(ValueError):
        RsParams(0.5, -1.0)


# ---------------------------------------------------------------- AT, AT+

def test_at_examples():
    lhs, ok = rs.at_condition(RsParams(0.9, 0.0), q=0.0)
    assert lhs == pytest.approx(0.81, abs=1e-14) and ok
    lhs, ok = rs.at_condition(RsParams(0.0, 1.0))
    assert lhs == 0.0 and ok
    lhs, ok = rs.at_condition(RsParams(2.0, 0.1))
    assert lhs > 1 and not ok


def test_at_lhs_against_adaptive_oracle():
    p = RsParams(0.8, 0.5)
    q = q_by_bisection(0.8, 0.5)
    oracle = 0.64 * quad_expect(lambda z: math.cosh(0.5 + 0.8 * math.sqrt(q) * z) ** -4)
    assert rs.at_condition(p)[0] == pytest.approx(oracle, abs=1e-10)


def test_phi_at_q_prime_equal_q():
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    expected = (math.log(2) + 0.16 * (1 - q) ** 2
                + quad_expect(lambda z: math.log(math.cosh(0.5 + 0.8 * math.sqrt(q) * z))))
    assert rs.phi_functional(p, 1.0, q, q) == pytest.approx(expected, abs=1e-11)


def test_phi_against_monte_carlo():
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    qp = 0.6
    beta, h = p.beta, p.h
    rng = np.random.default_rng(7)
    vals = []
    # 2e4 outer x 500 fresh inner draws = 1e7 Gaussian pairs
    for _ in range(20):
        zo = rng.standard_normal((1000, 1))
        zi = rng.standard_normal((1000, 500))
        arg = h + beta * math.sqrt(q) * zo + beta * math.sqrt(qp - q) * zi
        vals.append(np.log(np.cosh(arg).mean(axis=1)))
    v = np.concatenate(vals)
    mc = (math.log(2) + 0.25 * beta ** 2 * (1 - qp) ** 2 - 0.25 * beta ** 2 * (qp ** 2 - q ** 2)
          + v.mean())
    se = v.std() / math.sqrt(v.size)
    # log of a 500-sample mean is biased low by about rel.var / 1000
    bias = (math.exp(beta ** 2 * (qp - q)) - 1) / 1000
    assert abs(rs.phi_functional(p, 1.0, qp, q) - (mc + bias)) < 3 * se + bias


def test_phi_m1_gaussian_moment_identity():
    # at m = 1 the inner mean is cosh(a) exp(b^2 / 2)
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    for qp in (0.4, 0.8):
        elc = quad_expect(lambda z: math.log(math.cosh(0.5 + 0.8 * math.sqrt(q) * z)))
        cf = (math.log(2) + 0.16 * (1 - qp) ** 2 - 0.16 * (qp ** 2 - q ** 2) + elc
              + 0.32 * (qp - q))
        assert rs.phi_functional(p, 1.0, qp, q) == pytest.approx(cf, abs=1e-11)


def test_dm_phi_vanishes_at_q():
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    assert abs(rs.dm_phi(p, q, q, method="central")) < 1e-6
    assert abs(rs.dm_phi(p, q, q)) < 1e-12


@pytest.mark.parametrize("qp", [0.3, 0.5, 0.9, 1.0])
def test_dm_phi_analytic_matches_difference(qp):
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    a = rs.dm_phi(p, qp, q)
    c = rs.dm_phi(p, qp, q, method="central", step=1e-4)
    b = rs.dm_phi(p, qp, q, method="backward", step=1e-5)
    assert a == pytest.approx(c, abs=1e-8)
    assert a == pytest.approx(b, abs=1e-4)


@pytest.mark.parametrize("h", [0.1, 0.5, 1.5, 3.0])
def test_at_plus_margin_positive(h):
    grid, vals = rs.at_plus_profile(RsParams(0.8, h))
    assert np.all(vals > 0)
    assert grid[0] > rs.solve_q(RsParams(0.8, h)) and grid[-1] == 1.0


def test_at_plus_sign_near_q_matches_second_order_criterion():
    p = RsParams(1.1, 0.5)
    q = rs.solve_q(p)
    lhs, _ = rs.at_condition(p, q)
    grid, vals = rs.at_plus_profile(p, 64, q)
    # near q' = q the margin behaves like (1 - beta^2 E sech^4) (q' - q)^2 up to a positive factor
    assert np.sign(vals[0]) == np.sign(1.0 - lhs)


def test_at_plus_grid_size_guard():
    with pytest.raises(ValueError):
        rs.at_plus_profile(RsParams(0.5, 0.5), grid_size=8)


# ---------------------------------------------------------------- nu

def test_nu_at_zero_field():
    beta = 0.6
    nu1, nu2, _ = rs.nu_variances(RsParams(beta, 0.0), q=0.0, q4=0.0)
    assert nu1 == pytest.approx(1 / (1 - beta ** 2), rel=1e-14)
    assert nu2 == 0.0


def test_nu_against_recomputed_moments():
    beta, h = 0.6, 0.4
    q = q_by_bisection(beta, h)
    q4 = quad_expect(lambda z: math.tanh(h + beta * math.sqrt(q) * z) ** 4)
    d1 = 1 - beta ** 2 * (1 - 2 * q + q4)
    d2 = 1 - beta ** 2 * (1 - 4 * q + 3 * q4)
    assert d1 > 0 and d2 > 0
    nu1, nu2, _ = rs.nu_variances(RsParams(beta, h))
    assert nu1 == pytest.approx((1 - 2 * q + q4) / d1, abs=1e-10)
    assert nu2 == pytest.approx((q - q4) / (d1 * d2), abs=1e-10)


def test_nu_outside_validity():
    with pytest.raises(rs.ValidityError, match="validity"):
        rs.nu_variances(RsParams(2.0, 0.0), q=0.0, q4=0.0)


# ---------------------------------------------------------------- sequences

def test_alpha1_initialization():
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    seqs = rs.bolthausen_sequences(p, 4, q=q)
    g1 = quad_expect(lambda z: math.tanh(0.5 + 0.8 * math.sqrt(q) * z))
    assert seqs.a(1) == pytest.approx(math.sqrt(q) * g1, abs=1e-12)
    assert seqs.g(1) == pytest.approx(g1, abs=1e-12)


def test_psi_fixed_point_and_monotone():
    p = RsParams(0.8, 0.5)
    q = rs.solve_q(p)
    assert abs(rs.psi(p, q, q) - q) < 1e-8
    vals = [rs.psi(p, t, q) for t in np.linspace(0, q, 40)]
    assert np.all(np.diff(vals) >= -1e-15)
    assert 0 < vals[0]


def test_sequences_converge_with_truncation_flag():
    p = RsParams(0.8, 0.5)
    seqs = rs.bolthausen_sequences(p, 200)
    q = seqs.q
    assert np.all(np.diff(seqs.alpha) >= 0)
    assert np.all(np.diff(seqs.gamma_cap_sq) > 0)
    # strict below q up to summation rounding at the cut
    assert np.all(seqs.gamma_cap_sq < q + 1e-12)
    assert abs(seqs.gamma_cap_sq[-1] - q) < 1e-6
    # the recursion is cut once q - Gamma^2 reaches rounding level
    assert seqs.truncated_at is not None and seqs.truncated_at <= 200


def test_sequence_bracketing():
    p = RsParams(0.6, 0.4)
    seqs = rs.bolthausen_sequences(p, 12)
    q = seqs.q
    for k in range(2, len(seqs) + 1):
        assert seqs.G2(k - 1) < seqs.a(k) < q
        assert 0 < seqs.g(k) < math.sqrt(q - seqs.G2(k - 1))


def test_se_covariance_structure():
    p = RsParams(0.8, 0.5)
    seqs = rs.bolthausen_sequences(p, 10)
    K1 = rs.se_covariance(seqs, 1).entries
    assert K1.shape == (1, 1) and K1[0, 0] == seqs.q
    K = rs.se_covariance(seqs, 3).entries
    assert K[0, 1] == seqs.a(1) and K[0, 2] == seqs.a(1) and K[1, 2] == seqs.a(2)
    for k in range(1, 10):
        E = rs.se_covariance(seqs, k).entries
        assert np.linalg.eigvalsh(E)[0] >= -1e-10
        assert np.array_equal(E, E.T)


def test_se_covariance_inconsistent():
    bad = rs.BolthausenSequences(q=0.1, alpha=np.array([0.5, 0.5]), gamma=np.array([1.0, 0.0]),
                                 gamma_cap_sq=np.array([1.0, 1.0]))
    with pytest.raises(rs.ConsistencyError):
        rs.se_covariance(bad, 3)


# ---------------------------------------------------------------- Sigma

@pytest.mark.parametrize("beta,h", [(0.8, 0.5), (0.5, 1.0), (0.3, 0.2)])
def test_sigma_hessian_closed_form_vs_difference(beta, h):
    p = RsParams(beta, h)
    step = 1e-4
    f = lambda x: rs.sigma_variational(p, x, 0.0)
    fd = (f(step) - 2 * f(0.0) + f(-step)) / step ** 2
    assert fd == pytest.approx(rs.sigma_hessian_at_zero(p), abs=1e-6)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.1])
def test_sigma_concave_under_at(lam):
    co = rs.sigma_coefficients(RsParams(0.8, 0.5), lam)
    assert co.hessian() < 0


@pytest.mark.parametrize("lam", [0.02, 0.05])
def test_sigma_max_equals_lambda_integral(lam):
    beta, h = 0.8, 0.5
    p = RsParams(beta, h)
    q = rs.solve_q(p)
    inner = lambda t: 1 - beta ** 2 * quad_expect(
        lambda z: (math.cosh(h + beta * math.sqrt(q) * z) ** 2 - t) ** -2)
    integral, _ = integrate.quad(inner, 0, lam, epsabs=1e-13)
    co = rs.sigma_coefficients(p, lam, q)
    xs = np.linspace(-co.x_max, co.x_max, 201)
    assert max(rs.sigma_variational(p, x, lam, q) for x in xs) == pytest.approx(-integral, abs=1e-6)


def test_sigma_gradient_matches_difference():
    p = RsParams(0.8, 0.5)
    co = rs.sigma_coefficients(p, 0.05)
    step = 1e-4
    for x in (-0.7, 0.2, 1.1):
        fd = (rs.sigma_variational(p, x + step, 0.05) - rs.sigma_variational(p, x - step, 0.05)) / (2 * step)
        assert fd == pytest.approx(float(co.gradient(x)), abs=1e-6)


def test_sigma_domain_guards():
    p = RsParams(0.8, 0.5)
    with pytest.raises(ValueError):
        rs.sigma_coefficients(p, 1.0)
    with pytest.raises(ValueError):
        rs.sigma_variational(p, 100.0, 0.0)


def test_scalar_theory_bundle():
    th = rs.scalar_theory(RsParams(0.8, 0.5), k_max=8)
    d = th.to_dict()
    assert d["q"] == th.q and th.q4 <= th.q
    assert th.at_plus_margin > 0
    assert len(th.alpha) == 8
