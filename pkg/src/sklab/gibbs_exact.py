"""Exact finite-n Gibbs computations by enumeration of {-1, 1}^n.

The Gibbs weight of a configuration is exp(sigma.J.sigma / 2 + h.sigma) with
J = beta * g symmetric and zero on the diagonal.  Enumeration splits the
spins into a low block (whose spin table is built once) and a high block
(iterated), so energies cost O(2^n * n_low) and second moments reduce to
one weighted Gram product of the low table.
"""
from __future__ import annotations

import itertools
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

ENUMERATION_CAP = 20
LOW_BITS = 14
BLOCK_ENTRIES = 1 << 20
MAX_CUMULANT_ORDER = 6


class EnumerationCapError(ValueError):
    pass


class OrderCapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Disorder g, inverse temperature beta and fields h; couplings = beta * g."""
    g: np.ndarray
    fields: np.ndarray
    beta: float = 1.0
    cap: int = ENUMERATION_CAP

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        h = np.array(self.fields, dtype=float).reshape(-1)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("coupling matrix must be square")
        n = g.shape[0]
        if n < 1:
            raise ValueError("need at least one spin")
        if h.shape != (n,):
            raise ValueError(f"fields must have length {n}")
        if not np.array_equal(g, g.T):
            raise ValueError("coupling matrix must be exactly symmetric")
        if np.any(np.diag(g) != 0):
            raise ValueError("coupling matrix must have zero diagonal")
        g.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "fields", h)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def from_couplings(cls, J, fields, cap: int = ENUMERATION_CAP) -> "SpinSystem":
        return cls(np.asarray(J, dtype=float), fields, 1.0, cap)

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @cached_property
    def couplings(self) -> np.ndarray:
        J = self.beta * self.g
        J.setflags(write=False)
        return J

    # text format: "n beta", upper triangle of g row-major, then fields
    def dumps(self) -> str:
        iu = np.triu_indices(self.n, 1)
        lines = [f"{self.n} {self.beta!r}"]
        lines += [repr(float(x)) for x in self.g[iu]]
        lines += [repr(float(x)) for x in self.fields]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SpinSystem":
        tok = text.split()
        n, beta = int(tok[0]), float(tok[1])
        m = n * (n - 1) // 2
        vals = np.array([float(t) for t in tok[2:]])
        if vals.size != m + n:
            raise ValueError(f"expected {m + n} numbers after header, got {vals.size}")
        g = np.zeros((n, n))
        g[np.triu_indices(n, 1)] = vals[:m]
        g = g + g.T
        return cls(g, vals[m:], beta)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "SpinSystem":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class GibbsSolution:
    log_z: float
    magnetization: np.ndarray
    correlation: np.ndarray
    mean_energy: float

    @property
    def n(self) -> int:
        return self.magnetization.size


# ---------------------------------------------------------------- enumeration core

@lru_cache(maxsize=8)
def spin_table(n: int) -> np.ndarray:
    """All 2^n configurations; row r has spin j = 1 - 2 * bit_j(r)."""
    idx = np.arange(1 << n, dtype=np.int64)
    S = (1 - 2 * ((idx[:, None] >> np.arange(n)) & 1)).astype(np.float64)
    S.setflags(write=False)
    return S


def _check_cap(system: SpinSystem, cap: int | None):
    cap = system.cap if cap is None else cap
    if system.n > cap:
        raise EnumerationCapError(
            f"n={system.n} exceeds the enumeration cap {cap}; use the Monte Carlo "
            "estimator sklab.harness.glauber.glauber_estimate for larger systems")


def _split(n: int) -> int:
    return min(n, LOW_BITS)


def iter_log_weights(system: SpinSystem, cap: int | None = None
                     ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (spins, log-weight) blocks covering all configurations in index order."""
    _check_cap(system, cap)
    n = system.n
    J, h = system.couplings, system.fields
    L = _split(n)
    SL = spin_table(L)
    eL = 0.5 * np.einsum("ci,ci->c", SL @ J[:L, :L], SL) + SL @ h[:L]
    SH = spin_table(n - L)
    for c in range(SH.shape[0]):
        sH = SH[c]
        e = eL + SL @ (J[:L, L:] @ sH) + (0.5 * sH @ J[L:, L:] @ sH + h[L:] @ sH)
        S = np.empty((SL.shape[0], n))
        S[:, :L] = SL
        S[:, L:] = sH
        yield S, e


def gibbs_expect(system: SpinSystem, features: Callable[[np.ndarray], np.ndarray],
                 cap: int | None = None) -> np.ndarray:
    """<features(sigma)> with features mapping (rows, n) spins to (rows, ...) values."""
    shift, z, acc = -np.inf, 0.0, None
    for S, e in iter_log_weights(system, cap):
        top = e.max()
        if top > shift:
            scale = math.exp(shift - top) if np.isfinite(shift) else 0.0
            z *= scale
            if acc is not None:
                acc *= scale
            shift = top
        w = np.exp(e - shift)
        z += w.sum()
        f = np.asarray(features(S), dtype=float)
        # one contiguous row per feature, summed pairwise along it, so a feature's
        # rounding does not depend on which other features share the batch
        per_feature = np.ascontiguousarray(f.reshape(f.shape[0], -1).T)
        contrib = (per_feature * w).sum(axis=1).reshape(f.shape[1:])
        acc = contrib if acc is None else acc + contrib
    return acc / z


def log_partition(system: SpinSystem, cap: int | None = None) -> float:
    shift, z = -np.inf, 0.0
    for _, e in iter_log_weights(system, cap):
        top = e.max()
        if top > shift:
            z *= math.exp(shift - top) if np.isfinite(shift) else 0.0
            shift = top
        z += np.exp(e - shift).sum()
    return float(shift + math.log(z))


def enumerate_system(system: SpinSystem, cap: int | None = None) -> GibbsSolution:
    """log Z, magnetizations, connected correlations and mean energy."""
    _check_cap(system, cap)
    n = system.n
    J, h = system.couplings, system.fields
    L = _split(n)
    SL = spin_table(L)
    SH = spin_table(n - L)
    eL = 0.5 * np.einsum("ci,ci->c", SL @ J[:L, :L], SL) + SL @ h[:L]
    # high configurations processed in groups so that each block has <= BLOCK_ENTRIES weights
    group = max(1, BLOCK_ENTRIES // SL.shape[0])
    shift = -np.inf
    z = 0.0
    energy = 0.0
    w_low = np.zeros(SL.shape[0])
    lh = np.zeros((L, n - L))
    w_high = np.zeros(SH.shape[0])
    for start in range(0, SH.shape[0], group):
        sH = SH[start:start + group]
        eH = 0.5 * np.einsum("ci,ci->c", sH @ J[L:, L:], sH) + sH @ h[L:]
        E = eL[:, None] + SL @ (J[:L, L:] @ sH.T) + eH[None, :]
        top = E.max()
        if top > shift:
            scale = math.exp(shift - top) if np.isfinite(shift) else 0.0
            z *= scale
            energy *= scale
            w_low *= scale
            lh *= scale
            w_high[:start] *= scale
            shift = top
        W = np.exp(E - shift)
        z += W.sum()
        energy += np.sum(W * E)
        w_low += W.sum(axis=1)
        lh += (SL.T @ W) @ sH
        w_high[start:start + group] = W.sum(axis=0)
    first = np.concatenate([SL.T @ w_low, SH.T @ w_high]) / z
    second = np.empty((n, n))
    second[:L, :L] = (SL.T * w_low) @ SL
    second[:L, L:] = lh
    second[L:, :L] = lh.T
    second[L:, L:] = (SH.T * w_high) @ SH
    second /= z
    M = second - np.outer(first, first)
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 1.0 - first ** 2)
    return GibbsSolution(log_z=float(shift + math.log(z)), magnetization=first,
                         correlation=M, mean_energy=float(-energy / z))


def probabilities(system: SpinSystem, cap: int | None = None) -> np.ndarray:
    """Gibbs probabilities of all 2^n configurations in spin_table order."""
    blocks = [e for _, e in iter_log_weights(system, cap)]
    # iter_log_weights yields low bits fastest, matching the integer index order
    e = np.concatenate(blocks)
    p = np.exp(e - e.max())
    return p / p.sum()


# ---------------------------------------------------------------- cumulants

def _set_partitions(items: list) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


@lru_cache(maxsize=None)
def _partitions_of(k: int) -> tuple:
    return tuple(tuple(tuple(b) for b in p) for p in _set_partitions(list(range(k))))


def _parity_key(sites: Iterable[int]) -> frozenset:
    odd = set()
    for s in sites:
        odd ^= {s}
    return frozenset(odd)


def product_moments(system: SpinSystem, keys: Sequence[frozenset], cap: int | None = None) -> dict:
    """<prod_{j in key} sigma_j> for each parity set."""
    keys = list(dict.fromkeys(keys))
    nonempty = [k for k in keys if k]
    out = {frozenset(): 1.0}
    if nonempty:
        cols = [sorted(k) for k in nonempty]

        def feats(S):
            return np.stack([np.prod(S[:, c], axis=1) for c in cols], axis=1)

        vals = gibbs_expect(system, feats, cap)
        out.update(zip(nonempty, vals.tolist()))
    return out


def _check_indices(system: SpinSystem, indices: Sequence[int]):
    for i in indices:
        if not 0 <= i < system.n:
            raise IndexError(f"site {i} out of range for n={system.n}")


def _cumulant_from_moments(indices: Sequence[int], moments: dict) -> float:
    k = len(indices)
    total = 0.0
    for part in _partitions_of(k):
        b = len(part)
        coef = (-1) ** (b - 1) * math.factorial(b - 1)
        prod = 1.0
        for block in part:
            prod *= moments[_parity_key(indices[t] for t in block)]
        total += coef * prod
    return total


def _moment_keys(indices: Sequence[int]) -> set:
    keys = set()
    for part in _partitions_of(len(indices)):
        for block in part:
            keys.add(_parity_key(indices[t] for t in block))
    return keys


def cumulants(system: SpinSystem, queries: Sequence[Sequence[int]]) -> list[float]:
    """Joint cumulants for many index multisets with a single enumeration."""
    # canonical order makes the floating-point sum permutation invariant
    queries = [sorted(int(i) for i in idx) for idx in queries]
    keys = set()
    for idx in queries:
        if not 1 <= len(idx) <= MAX_CUMULANT_ORDER:
            raise OrderCapError(f"cumulant order {len(idx)} outside 1..{MAX_CUMULANT_ORDER}")
        _check_indices(system, idx)
        keys |= _moment_keys(idx)
    moments = product_moments(system, sorted(keys, key=sorted))
    return [_cumulant_from_moments(idx, moments) for idx in queries]


def cumulant(system: SpinSystem, indices: Sequence[int]) -> float:
    """Joint cumulant of (sigma_i1, ..., sigma_ik), i.e. d^k log Z / dh_i1..dh_ik."""
    return cumulants(system, [tuple(indices)])[0]


def replica_expansion(indices: Sequence[int], leading: bool = True) -> dict:
    """Expand <sigma^1_j1 prod_u sum_{v<=u} (sigma^v_j(u+1) - sigma^(u+1)_j(u+1))>.

    Returns {per-replica parity sets: coefficient}; replicas are independent
    so each term is a product of single-replica moments.
    """
    p = len(indices)
    start = [frozenset()] * max(p, 1)
    if leading:
        start[0] = frozenset([indices[0]])
    terms = {tuple(start): 1}
    for u in range(1, p):
        j = indices[u]
        nxt: dict = defaultdict(int)
        factor = [(v, 1) for v in range(u)] + [(u, -u)]
        for key, c in terms.items():
            for r, a in factor:
                new = list(key)
                new[r] = new[r] ^ {j}
                nxt[tuple(new)] += c * a
        terms = {k: c for k, c in nxt.items() if c != 0}
    return terms


def cumulant_replica(system: SpinSystem, indices: Sequence[int], leading: bool = True) -> float:
    """Same cumulant through the replica telescoping representation."""
    if not 1 <= len(indices) <= MAX_CUMULANT_ORDER:
        raise OrderCapError(f"replica order {len(indices)} outside 1..{MAX_CUMULANT_ORDER}")
    _check_indices(system, indices)
    terms = replica_expansion(indices, leading)
    keys = {s for key in terms for s in key}
    moments = product_moments(system, sorted(keys, key=sorted))
    return float(sum(c * math.prod(moments[s] for s in key) for key, c in terms.items()))


def kp_point(system: SpinSystem, free_indices: Sequence[int], k: int) -> float:
    """n^{-k} sum over i_1..i_k in [n] of m_{i1 i1 ... ik ik j1 ... jp}."""
    if k < 0 or 2 * k + len(free_indices) > MAX_CUMULANT_ORDER:
        raise OrderCapError(f"2k + p = {2 * k + len(free_indices)} exceeds {MAX_CUMULANT_ORDER}")
    if k == 0:
        return cumulant(system, free_indices)
    free = list(free_indices)
    queries = [tuple(x for i in avg for x in (i, i)) + tuple(free)
               for avg in itertools.product(range(system.n), repeat=k)]
    return math.fsum(cumulants(system, queries)) / system.n ** k


# ---------------------------------------------------------------- cavity / conditional

def cavity(system: SpinSystem, i: int) -> SpinSystem:
    """Remove spin i; the remaining fields are unchanged."""
    if system.n < 2:
        raise ValueError("cavity requires n >= 2")
    keep = np.delete(np.arange(system.n), i)
    return SpinSystem(system.g[np.ix_(keep, keep)], system.fields[keep], system.beta, system.cap)


def conditional(system: SpinSystem, i: int, s: int) -> SpinSystem:
    """Freeze sigma_i = s; its couplings become extra fields on the others."""
    if s not in (-1, 1):
        raise ValueError("frozen spin must be +1 or -1")
    if system.n < 2:
        raise ValueError("conditional requires n >= 2")
    keep = np.delete(np.arange(system.n), i)
    h = system.fields[keep] + system.couplings[i, keep] * s
    return SpinSystem(system.g[np.ix_(keep, keep)], h, system.beta, system.cap)


@dataclass(frozen=True)
class SiteDecomposition:
    """delta_i, eps_i and Delta_i applied to m_j and m_jk, indexed over the other sites.

    ``sites`` maps reduced index -> original index.  Conditional log-partition
    functions are kept so that m_i can be reconstructed.
    """
    i: int
    sites: np.ndarray
    delta_m: np.ndarray
    eps_m: np.ndarray
    Delta_m: np.ndarray
    delta_M: np.ndarray
    eps_M: np.ndarray
    Delta_M: np.ndarray
    cavity_m: np.ndarray
    cavity_M: np.ndarray
    log_z_plus: float
    log_z_minus: float


def site_decomposition(system: SpinSystem, i: int) -> SiteDecomposition:
    plus = enumerate_system(conditional(system, i, 1))
    minus = enumerate_system(conditional(system, i, -1))
    cav = enumerate_system(cavity(system, i))
    eps_m = 0.5 * (plus.magnetization + minus.magnetization)
    eps_M = 0.5 * (plus.correlation + minus.correlation)
    return SiteDecomposition(
        i=i, sites=np.delete(np.arange(system.n), i),
        delta_m=0.5 * (plus.magnetization - minus.magnetization), eps_m=eps_m,
        Delta_m=eps_m - cav.magnetization,
        delta_M=0.5 * (plus.correlation - minus.correlation), eps_M=eps_M,
        Delta_M=eps_M - cav.correlation,
        cavity_m=cav.magnetization, cavity_M=cav.correlation,
        log_z_plus=plus.log_z, log_z_minus=minus.log_z)


def delta_eps(system: SpinSystem, i: int, observable) -> tuple[float, float, float]:
    """(delta_i, eps_i, Delta_i) of <sigma_j> (int j) or of <sigma_j; sigma_k> (pair)."""
    dec = site_decomposition(system, i)
    pos = {int(s): r for r, s in enumerate(dec.sites)}
    if np.ndim(observable) == 0:
        r = pos[int(observable)]
        return float(dec.delta_m[r]), float(dec.eps_m[r]), float(dec.Delta_m[r])
    j, k = observable
    a, b = pos[int(j)], pos[int(k)]
    return float(dec.delta_M[a, b]), float(dec.eps_M[a, b]), float(dec.Delta_M[a, b])


# ---------------------------------------------------------------- overlaps

def walsh_hadamard(a: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform of a length-2^n vector."""
    x = np.array(a, dtype=float)
    N = x.size
    h = 1
    while h < N:
        y = x.reshape(-1, 2, h)
        x = np.stack((y[:, 0] + y[:, 1], y[:, 0] - y[:, 1]), axis=1).reshape(-1)
        h *= 2
    return x


def overlap_distribution(system: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    """Support values R = 1 - 2d/n and their probabilities under two replicas."""
    n = system.n
    p = probabilities(system)
    fp = walsh_hadamard(p)
    # P(sigma^1 xor sigma^2 = x) is the xor self-convolution of p
    r = walsh_hadamard(fp * fp) / p.size
    d = np.bitwise_count(np.arange(p.size, dtype=np.uint64)).astype(np.int64) \
        if hasattr(np, "bitwise_count") else \
        np.array([bin(x).count("1") for x in range(p.size)])
    probs = np.bincount(d, weights=r, minlength=n + 1)
    values = 1.0 - 2.0 * np.arange(n + 1) / n
    return values, probs


@dataclass(frozen=True)
class OverlapStats:
    mean_R: float
    var_R: float
    exp_conc_proxy: float
    overflow: bool


def overlap_stats(system: SpinSystem, q_ref: float, K: float = 1.0) -> OverlapStats:
    """<R>, Var R and <exp(n (R - q_ref)^2 / K)> from the exact overlap law."""
    values, probs = overlap_distribution(system)
    mean = math.fsum(values * probs)
    var = math.fsum((values - mean) ** 2 * probs)
    with np.errstate(over="ignore"):
        ex = np.exp(system.n * (values - q_ref) ** 2 / K)
    overflow = not np.all(np.isfinite(ex))
    proxy = float("inf") if overflow else math.fsum(ex * probs)
    return OverlapStats(mean_R=mean, var_R=var, exp_conc_proxy=proxy, overflow=overflow)


# ---------------------------------------------------------------- T statistics

_FACTOR = re.compile(r"T\(\s*([0-9,\s]*)\)")


def parse_pattern(pattern: str) -> list[tuple[int, ...]]:
    """'T(1,2)*T(3)*T()' -> [(1, 2), (3,), ()]; exponents like T(1,2)^2 are allowed."""
    factors = []
    for chunk in pattern.replace(" ", "").split("*"):
        if not chunk:
            continue
        base, _, power = chunk.partition("^")
        mt = _FACTOR.fullmatch(base)
        if mt is None:
            raise ValueError(f"cannot parse factor {chunk!r}")
        reps = tuple(int(t) for t in mt.group(1).split(",") if t)
        if len(reps) > 2 or (len(reps) == 2 and reps[0] == reps[1]):
            raise ValueError(f"bad replica labels in {chunk!r}")
        factors += [reps] * (int(power) if power else 1)
    return factors


def centered_moments(system: SpinSystem, order: int, chunk: int = 4096
                     ) -> tuple[np.ndarray, list[np.ndarray]]:
    """m and the centered moment tensors <(sigma - m)^{(x) r}> for r = 0..order."""
    sol = enumerate_system(system)
    m = sol.magnetization
    n = system.n
    tensors = [np.ones(()), np.zeros(n), sol.correlation]
    if order >= 3:
        p = probabilities(system)
        S = spin_table(n)
        c3 = np.zeros((n * n, n))
        c4 = np.zeros((n * n, n * n)) if order >= 4 else None
        for a in range(0, p.size, chunk):
            X = S[a:a + chunk] - m
            A = (X[:, :, None] * X[:, None, :]).reshape(len(X), -1)
            Ap = A * p[a:a + chunk, None]
            c3 += Ap.T @ X
            if c4 is not None:
                c4 += Ap.T @ A
        tensors.append(c3.reshape((n,) * 3))
        if c4 is not None:
            tensors.append(c4.reshape((n,) * 4))
    return m, tensors


def t_statistics(system: SpinSystem, pattern: str) -> float:
    """Exact Gibbs expectation of a product of T_{l,l'}, T_l and T factors.

    T_{l,l'} = n^-1 sum_i (s^l_i - m_i)(s^l'_i - m_i), T_l = n^-1 sum_i (s^l_i - m_i) m_i,
    T = n^-1 |m|^2.  Replicas are independent, so the expectation is a full
    contraction of per-replica centered moment tensors.
    """
    factors = parse_pattern(pattern)
    degree = len(factors)
    if degree > 4:
        raise OrderCapError(f"pattern degree {degree} exceeds 4")
    replicas = sorted({r for f in factors for r in f})
    if len(replicas) > 4:
        raise OrderCapError("at most four replicas")
    if degree == 0:
        return 1.0
    letters = "abcdefgh"
    touch: dict = defaultdict(list)
    for a, f in enumerate(factors):
        for r in f:
            touch[r].append(letters[a])
    order = max((len(v) for v in touch.values()), default=0)
    if any(len(v) == 1 for v in touch.values()):
        return 0.0
    m, tensors = centered_moments(system, max(order, 2))
    operands, subs = [], []
    for r, ls in touch.items():
        operands.append(tensors[len(ls)])
        subs.append("".join(ls))
    for a, f in enumerate(factors):
        if len(f) == 1:
            operands.append(m)
            subs.append(letters[a])
        elif len(f) == 0:
            operands.append(m * m)
            subs.append(letters[a])
    val = np.einsum(",".join(subs) + "->", *operands, optimize=True)
    return float(val) / system.n ** degree


# ---------------------------------------------------------------- random instances

def random_system(n: int, beta: float, h, rng: np.random.Generator) -> SpinSystem:
    """GOE disorder of variance 1/n off the diagonal and a constant or given field."""
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    g = np.triu(a, 1)
    g = g + g.T
    fields = np.full(n, float(h)) if np.ndim(h) == 0 else np.asarray(h, float)
    return SpinSystem(g, fields, beta)
