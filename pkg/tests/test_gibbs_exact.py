import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from sklab import gibbs_exact as ge
from sklab import scalar_rs as rs
from sklab.disorder import sample
from sklab.gibbs_exact import SpinSystem


def brute(system):
    """(configs, probabilities) by a plain loop over itertools.product."""
    n = system.n
    J, h = system.couplings, system.fields
    S = np.array(list(itertools.product([1.0, -1.0], repeat=n)))
    e = np.array([0.5 * s @ J @ s + h @ s for s in S])
    return S, np.exp(e - logsumexp(e))


def brute_log_z(J, h):
    S = np.array(list(itertools.product([1.0, -1.0], repeat=len(h))))
    return logsumexp(0.5 * np.einsum("ci,ij,cj->c", S, J, S) + S @ h)


def make(n, beta, h, seed):
    return ge.random_system(n, beta, h, np.random.default_rng(seed))


def fd_cumulant(system, idx, eps=0.02):
    """Mixed field derivative of log Z by central differences, two Richardson levels."""
    J, h0 = system.couplings, np.array(system.fields)

    def D(e):
        total = 0.0
        for signs in itertools.product((1, -1), repeat=len(idx)):
            h = h0.copy()
            for s, i in zip(signs, idx):
                h[i] += s * e
            total += math.prod(signs) * brute_log_z(J, h)
        return total / (2 * e) ** len(idx)

    d1, d2, d4 = D(eps), D(eps / 2), D(eps / 4)
    r1 = (4 * d2 - d1) / 3
    r2 = (4 * d4 - d2) / 3
    return (16 * r2 - r1) / 15


# ---------------------------------------------------------------- enumeration

def test_independent_spins():
    n, h = 6, 0.7
    sol = ge.enumerate_system(SpinSystem(np.zeros((n, n)), np.full(n, h), 0.8))
    assert np.allclose(sol.magnetization, math.tanh(h), atol=1e-15)
    assert np.allclose(sol.correlation, np.diag(np.full(n, 1 - math.tanh(h) ** 2)), atol=1e-15)
    assert sol.log_z == pytest.approx(n * math.log(2 * math.cosh(h)), rel=1e-14)


def test_two_spin_hand_sum():
    J, h = 0.9, 0.3
    w = {(a, b): math.exp(J * a * b + h * (a + b)) for a in (1, -1) for b in (1, -1)}
    Z = sum(w.values())
    m1 = sum(a * v for (a, b), v in w.items()) / Z
    s12 = sum(a * b * v for (a, b), v in w.items()) / Z
    g = np.array([[0.0, J], [J, 0.0]])
    sol = ge.enumerate_system(SpinSystem(g, [h, h], 1.0))
    assert sol.correlation[0, 1] == pytest.approx(s12 - m1 * m1, abs=1e-15)
    assert sol.log_z == pytest.approx(math.log(Z), abs=1e-15)


@pytest.mark.parametrize("n", [1, 3, 7, 15, 16])
def test_enumeration_matches_brute_force(n):
    system = make(n, 0.9, 0.4, n) if n > 1 else SpinSystem(np.zeros((1, 1)), [0.3], 1.0)
    S, p = brute(system)
    sol = ge.enumerate_system(system)
    m = p @ S
    M = (S * p[:, None]).T @ S - np.outer(m, m)
    assert np.allclose(sol.magnetization, m, atol=1e-13)
    assert np.allclose(sol.correlation, M, atol=1e-13)
    e = -np.array([0.5 * s @ system.couplings @ s + system.fields @ s for s in S])
    assert sol.mean_energy == pytest.approx(p @ e, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 11), st.floats(0.0, 1.5), st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
def test_solution_invariants(n, beta, h, seed):
    sol = ge.enumerate_system(make(n, beta, h, seed))
    m, M = sol.magnetization, sol.correlation
    assert np.array_equal(M, M.T)
    assert np.array_equal(np.diag(M), 1 - m ** 2)
    assert np.linalg.eigvalsh(M)[0] >= -1e-10
    assert np.trace(M) == pytest.approx(n - m @ m, rel=1e-12, abs=1e-12)
    assert np.all(np.abs(m) < 1)


def test_cap_refusal_mentions_monte_carlo():
    system = SpinSystem(np.zeros((21, 21)), np.zeros(21), 1.0)
    with pytest.raises(ge.EnumerationCapError, match="Glauber|Monte Carlo"):
        ge.enumerate_system(system)
    small = SpinSystem(np.zeros((5, 5)), np.zeros(5), 1.0, cap=4)
    with pytest.raises(ge.EnumerationCapError):
        ge.enumerate_system(small)


def test_system_validation():
    with pytest.raises(ValueError, match="symmetric"):
        SpinSystem(np.array([[0.0, 1.0], [0.5, 0.0]]), [0, 0])
    with pytest.raises(ValueError, match="diagonal"):
        SpinSystem(np.eye(2), [0, 0])


def test_text_round_trip(tmp_path):
    system = make(7, 0.83, 0.41, 3)
    again = SpinSystem.loads(system.dumps())
    assert np.array_equal(again.g, system.g) and np.array_equal(again.fields, system.fields)
    assert again.beta == system.beta
    system.save(tmp_path / "s.txt")
    assert SpinSystem.load(tmp_path / "s.txt").dumps() == system.dumps()
    assert system.dumps().splitlines()[0] == "7 0.83"


def test_probabilities_order():
    system = make(5, 1.0, 0.2, 0)
    p = ge.probabilities(system)
    S = ge.spin_table(5)
    e = 0.5 * np.einsum("ci,ij,cj->c", S, system.couplings, S) + S @ system.fields
    assert np.allclose(p, np.exp(e - logsumexp(e)), atol=1e-15)


# ---------------------------------------------------------------- cumulants

def test_cumulant_low_orders():
    system = make(6, 0.8, 0.3, 1)
    sol = ge.enumerate_system(system)
    assert ge.cumulant(system, [2]) == pytest.approx(sol.magnetization[2], abs=1e-14)
    assert ge.cumulant(system, [1, 4]) == pytest.approx(sol.correlation[1, 4], abs=1e-14)
    assert ge.cumulant(system, [3, 3]) == pytest.approx(1 - sol.magnetization[3] ** 2, abs=1e-14)


def test_cumulant_independent_spins_vanish():
    system = SpinSystem(np.zeros((5, 5)), np.linspace(0.1, 0.5, 5), 1.0)
    assert abs(ge.cumulant(system, [0, 1, 2])) < 1e-15
    assert abs(ge.cumulant(system, [0, 1, 2, 3])) < 1e-15
    # a single site has nonzero self-cumulants: d^3 log cosh = -2 tanh sech^2
    t = math.tanh(0.1)
    assert ge.cumulant(system, [0, 0, 0]) == pytest.approx(-2 * t * (1 - t * t), abs=1e-14)


@pytest.mark.parametrize("idx", [(0, 1), (0, 1, 2), (0, 0, 3), (1, 2, 3, 4), (0, 0, 2, 2), (4, 4, 4)])
def test_cumulant_vs_log_z_differences(idx):
    system = make(5, 0.7, 0.4, 11)
    assert ge.cumulant(system, idx) == pytest.approx(fd_cumulant(system, idx), abs=1e-6)


def test_pair_cumulant_vs_first_difference():
    system = make(6, 0.7, 0.4, 5)
    step = 1e-5
    h = np.array(system.fields)
    hp, hm = h.copy(), h.copy()
    hp[3] += step
    hm[3] -= step
    mp = ge.enumerate_system(SpinSystem(system.g, hp, system.beta)).magnetization[1]
    mm = ge.enumerate_system(SpinSystem(system.g, hm, system.beta)).magnetization[1]
    assert ge.cumulant(system, [1, 3]) == pytest.approx((mp - mm) / (2 * step), abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=4), st.integers(0, 1000), st.randoms())
def test_cumulant_permutation_and_replica(idx, seed, rnd):
    system = make(6, 0.9, 0.3, seed)
    c = ge.cumulant(system, idx)
    perm = list(idx)
    rnd.shuffle(perm)
    assert ge.cumulant(system, perm) == c
    assert ge.cumulant_replica(system, idx) == pytest.approx(c, abs=1e-9)


def test_replica_representation_examples():
    system = make(6, 0.9, 0.3, 2)
    sol = ge.enumerate_system(system)
    assert ge.cumulant_replica(system, [4]) == pytest.approx(sol.magnetization[4], abs=1e-14)
    for seed in range(100):
        s = make(5, 1.0, 0.5, seed)
        assert ge.cumulant_replica(s, [0, 3]) == pytest.approx(ge.cumulant(s, [0, 3]), abs=1e-12)
    assert abs(ge.cumulant_replica(system, [0, 1, 2], leading=False)) < 1e-14


def test_order_caps():
    system = make(4, 0.5, 0.2, 0)
    with pytest.raises(ge.OrderCapError):
        ge.cumulant(system, [0] * 7)
    with pytest.raises(ge.OrderCapError):
        ge.kp_point(system, [0, 1, 2], 2)
    with pytest.raises(IndexError):
        ge.cumulant(system, [4])


def test_kp_point_k0():
    system = make(6, 0.8, 0.3, 4)
    assert ge.kp_point(system, [1, 2], 0) == ge.cumulant(system, [1, 2])


def test_kp_point_replica_form():
    # m_{j;1} = <(n^-1 |m|^2 - R_12) (s^1_j + s^2_j - 2 s^3_j)> with three independent replicas
    for seed in range(5):
        system = make(6, 0.9, 0.4, seed)
        S, p = brute(system)
        m = p @ S
        n = system.n
        j = 2
        R = (S @ S.T) / n
        A = m @ m / n - R
        P = p[:, None] * p[None, :]
        # replica 3 is independent of (1, 2), so s^3_j averages to m_j
        lhs = math.fsum((P * A * (S[:, j][:, None] + S[:, j][None, :] - 2 * m[j])).ravel())
        assert ge.kp_point(system, [j], 1) == pytest.approx(lhs, abs=1e-10)


def test_kp_point_independent_spins():
    n, h = 5, 0.6
    system = SpinSystem(np.zeros((n, n)), np.full(n, h), 1.0)
    t = math.tanh(h)
    # only i = j survives: d^3 log cosh(h) / n
    assert ge.kp_point(system, [0], 1) == pytest.approx(-2 * t * (1 - t * t) / n, abs=1e-14)


# ---------------------------------------------------------------- cavity / conditional

def test_cavity_independent():
    system = SpinSystem(np.zeros((5, 5)), np.linspace(0.1, 0.9, 5), 1.0)
    cav = ge.enumerate_system(ge.cavity(system, 2)).magnetization
    full = ge.enumerate_system(system).magnetization
    assert np.allclose(cav, np.delete(full, 2), atol=1e-15)


def test_cavity_is_decoupled_marginal():
    for seed in range(5):
        system = make(3, 1.0, 0.3, seed)
        i = seed % 3
        g = np.array(system.g)
        g[i, :] = g[:, i] = 0.0
        S, p = brute(SpinSystem(g, system.fields, system.beta))
        keep = np.delete(np.arange(3), i)
        m_marg = p @ S[:, keep]
        m_cav = ge.enumerate_system(ge.cavity(system, i)).magnetization
        assert np.allclose(m_cav, m_marg, atol=1e-12)


def test_conditional_with_zero_row_is_cavity():
    system = make(6, 0.8, 0.3, 9)
    g = np.array(system.g)
    g[1, :] = g[:, 1] = 0.0
    decoupled = SpinSystem(g, system.fields, system.beta)
    a = ge.enumerate_system(ge.conditional(decoupled, 1, 1))
    b = ge.enumerate_system(ge.cavity(decoupled, 1))
    assert np.allclose(a.magnetization, b.magnetization, atol=1e-15)
    d, _, D = ge.delta_eps(decoupled, 1, 3)
    assert abs(d) < 1e-15 and abs(D) < 1e-15


def test_magnetization_from_conditionals():
    system = make(8, 1.1, 0.2, 3)
    sol = ge.enumerate_system(system)
    for i in range(8):
        dec = ge.site_decomposition(system, i)
        m_i = math.tanh(system.fields[i] + 0.5 * (dec.log_z_plus - dec.log_z_minus))
        assert m_i == pytest.approx(sol.magnetization[i], abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_site_identities(seed):
    n = 4 + seed
    system = make(n, 1.0, 0.4, 100 + seed)
    sol = ge.enumerate_system(system)
    m, M = sol.magnetization, sol.correlation
    i = seed % n
    dec = ge.site_decomposition(system, i)
    rest = dec.sites
    # m_ij = (1 - m_i^2) delta_i m_j
    assert np.allclose(M[i, rest], (1 - m[i] ** 2) * dec.delta_m, atol=1e-12)
    # three-term decomposition of m_jk
    three = (np.outer(dec.delta_m, M[i, rest]) + dec.eps_M + m[i] * dec.delta_M)
    assert np.allclose(M[np.ix_(rest, rest)], three, atol=1e-12)
    j, k = rest[0], rest[-1]
    d, e, D = ge.delta_eps(system, i, (j, k))
    assert d == dec.delta_M[0, -1] and D == pytest.approx(e - dec.cavity_M[0, -1], abs=1e-15)


# ---------------------------------------------------------------- overlaps

def test_walsh_hadamard_matches_dense():
    from scipy.linalg import hadamard
    a = np.random.default_rng(0).standard_normal(16)
    assert np.allclose(ge.walsh_hadamard(a), hadamard(16) @ a, atol=1e-12)


def two_replica_overlap(system):
    S, p = brute(system)
    R = (S @ S.T) / system.n
    P = np.outer(p, p)
    mean = np.sum(P * R)
    return mean, np.sum(P * (R - mean) ** 2), R, P


@pytest.mark.parametrize("seed", range(4))
def test_overlap_stats_vs_two_replica_sum(seed):
    system = make(6, 1.0, 0.3, seed)
    mean, var, R, P = two_replica_overlap(system)
    sol = ge.enumerate_system(system)
    ov = ge.overlap_stats(system, q_ref=0.2, K=2.0)
    assert ov.mean_R == pytest.approx(mean, abs=1e-13)
    assert ov.var_R == pytest.approx(var, abs=1e-13)
    assert ov.mean_R == pytest.approx(1 - np.trace(sol.correlation) / 6, abs=1e-13)
    M, m = sol.correlation, sol.magnetization
    assert ov.var_R == pytest.approx((np.sum(M * M) + 2 * m @ M @ m) / 36, abs=1e-13)
    assert ov.exp_conc_proxy == pytest.approx(np.sum(P * np.exp(6 * (R - 0.2) ** 2 / 2.0)), rel=1e-12)


def test_overlap_independent_closed_form():
    n, h = 7, 0.5
    t2 = math.tanh(h) ** 2
    ov = ge.overlap_stats(SpinSystem(np.zeros((n, n)), np.full(n, h), 1.0), t2)
    assert ov.mean_R == pytest.approx(t2, abs=1e-14)
    assert ov.var_R == pytest.approx((1 - t2 * t2) / n, abs=1e-14)


def test_overlap_proxy_overflow_flag():
    ov = ge.overlap_stats(SpinSystem(np.zeros((4, 4)), np.zeros(4), 1.0), q_ref=0.0, K=1e-4)
    assert ov.overflow and ov.exp_conc_proxy == float("inf")


# ---------------------------------------------------------------- T statistics

def brute_t(system, factors, n_rep):
    S, p = brute(system)
    m = p @ S
    n = system.n
    X = S - m
    total = 0.0
    for combo in itertools.product(range(len(p)), repeat=n_rep):
        w = math.prod(p[c] for c in combo)
        val = 1.0
        for f in factors:
            if len(f) == 2:
                val *= X[combo[f[0] - 1]] @ X[combo[f[1] - 1]] / n
            elif len(f) == 1:
                val *= X[combo[f[0] - 1]] @ m / n
            else:
                val *= m @ m / n
        total += w * val
    return total


@pytest.mark.parametrize("pattern,reps", [
    ("T(1,2)^2", 2), ("T(1,2)*T(2,3)*T(3,1)", 3), ("T(1)^2*T()", 1), ("T(1,2)*T(1)*T(2)", 2),
    ("T(1,2)*T(3,4)*T(1,3)*T(2,4)", 4), ("T(1)^3", 1)])
def test_t_statistics_vs_brute_force(pattern, reps):
    system = make(4, 1.0, 0.3, 7)
    factors = ge.parse_pattern(pattern)
    expected = brute_t(system, factors, reps)
    assert ge.t_statistics(system, pattern) == pytest.approx(expected, abs=1e-13)


def test_t_statistics_simple_values():
    system = make(8, 0.9, 0.4, 1)
    sol = ge.enumerate_system(system)
    assert ge.t_statistics(system, "T(1,2)") == 0.0
    assert ge.t_statistics(system, "T()") == pytest.approx(sol.magnetization @ sol.magnetization / 8)
    M = sol.correlation
    assert ge.t_statistics(system, "T(1,2)^2") == pytest.approx(np.sum(M * M) / 64, abs=1e-14)
    zero = SpinSystem(np.zeros((5, 5)), np.full(5, 0.4), 1.0)
    assert ge.t_statistics(zero, "T(1,2)") == 0.0


def test_t_statistics_caps_and_parse():
    system = make(4, 0.5, 0.2, 0)
    with pytest.raises(ge.OrderCapError):
        ge.t_statistics(system, "T(1,2)^5")
    with pytest.raises(ValueError):
        ge.parse_pattern("T(1,1)")
    with pytest.raises(ValueError):
        ge.parse_pattern("X(1)")


@pytest.mark.slow
def test_t12_second_moment_vs_limit_variance():
    beta, h, n = 0.5, 0.4, 14
    vals = []
    for seed in range(5000):
        system = SpinSystem(sample(n, seed).G, np.full(n, h), beta)
        M = ge.enumerate_system(system).correlation
        vals.append(np.sum(M * M) / n ** 2)
    nu1 = rs.nu_variances(rs.RsParams(beta, h))[0]
    assert np.mean(vals) == pytest.approx(nu1 / n, rel=0.15)
