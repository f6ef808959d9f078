"""Seedable GOE disorder and the conditional (deflated) decomposition of G.

Every pre-matrix entry w_ij is a pure function of (seed, i, j): a splitmix64
hash of the counter gives a uniform, and the inverse normal CDF turns it
into a Gaussian.  Output therefore does not depend on thread count, block
shape, or n (a submatrix of a larger sample has the same entries up to the
1/sqrt(n) scale).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
from scipy.special import ndtri

MAGIC = b"SKLABMAT"
ROW_BLOCK = 256
_U53 = 2.0 ** -53


@numba.njit(cache=True)
def _splitmix(x):
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True)
def _fill_uniforms(key, rows, cols, out):
    for a in range(rows.shape[0]):
        hi = np.uint64(rows[a]) << np.uint64(32)
        for b in range(cols.shape[0]):
            x = _splitmix((hi | np.uint64(cols[b])) ^ key)
            out[a, b] = (np.float64(x >> np.uint64(11)) + 0.5) * _U53


def _key(seed: int) -> np.uint64:
    # hash the seed once so that nearby seeds give unrelated streams
    # the dispatcher hands back a Python int; re-wrap so keys above 2^63 stay unsigned
    return np.uint64(_splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(0x9E3779B97F4A7C15)))


def keyed_normals(seed: int, rows, cols) -> np.ndarray:
    """Standard normals for the entry grid rows x cols (no diagonal masking)."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    u = np.empty((rows.size, cols.size))
    _fill_uniforms(_key(seed), rows, cols, u)
    return ndtri(u)


def pre_matrix(n: int, seed: int) -> np.ndarray:
    """W with i.i.d. N(0, 1/n) entries off the diagonal and zeros on it."""
    idx = np.arange(n)
    W = keyed_normals(seed, idx, idx) / np.sqrt(n)
    np.fill_diagonal(W, 0.0)
    return W


def goe_matrix(n: int, seed: int, block: int = ROW_BLOCK) -> np.ndarray:
    """G = (W + W^T)/sqrt(2), built in blocks without materializing W."""
    G = np.empty((n, n))
    idx = np.arange(n)
    s = 1.0 / np.sqrt(2.0 * n)
    for a in range(0, n, block):
        r = idx[a:a + block]
        cols = idx[a:]
        upper = keyed_normals(seed, r, cols)
        lower = keyed_normals(seed, cols, r).T
        blk = (upper + lower) * s
        G[a:a + block, a:] = blk
        G[a:, a:a + block] = blk.T
    np.fill_diagonal(G, 0.0)
    return G


@dataclass(eq=False)
class DisorderSample:
    n: int
    seed: int
    G: np.ndarray

    @cached_property
    def W(self) -> np.ndarray:
        return pre_matrix(self.n, self.seed)


def sample(n: int, seed: int) -> DisorderSample:
    if n < 2:
        raise ValueError("n must be >= 2")
    return DisorderSample(n=n, seed=int(seed), G=goe_matrix(n, seed))


# ---------------------------------------------------------------- binary dump

def dump_matrix(path, A: np.ndarray, seed: int = 0):
    A = np.ascontiguousarray(A, dtype="<f8")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", A.shape[0], seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(A.tobytes(order="C"))


def load_matrix(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic bytes")
    n, seed = struct.unpack("<QQ", data[8:24])
    A = np.frombuffer(data, dtype="<f8", count=n * n, offset=24).reshape(n, n).copy()
    return A, int(seed)


# ---------------------------------------------------------------- deflation

class FrameDegenerateError(ArithmeticError):
    pass


def gram_schmidt_next(m_next: np.ndarray, frame: list[np.ndarray] | np.ndarray,
                      rel_floor: float = 1e-12) -> np.ndarray:
    """Unit vector along the part of m_next orthogonal to the frame (two passes)."""
    v = np.array(m_next, dtype=float)
    norm0 = np.linalg.norm(v)
    if len(frame):
        F = np.asarray(frame)
        for _ in range(2):
            v -= F.T @ (F @ v)
    r = np.linalg.norm(v)
    if norm0 == 0 or r <= rel_floor * norm0:
        raise FrameDegenerateError(
            f"frame degenerate: residual {r!r} vs input norm {norm0!r}")
    return v / r


@dataclass(eq=False)
class ConditionalState:
    """Orthonormal frame phi^(s), fields zeta^(s) and the deflated matrix.

    G^(k) is applied matrix-free: G^(k) x = G x - sum_s rho_bar^(s) x.  When
    ``track_w`` is set the asymmetric W^(k) is kept densely as well (small n).
    """
    G: np.ndarray
    W: np.ndarray | None = None
    phi: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    reorthogonalized: list = field(default_factory=list)
    ortho_tol: float = 1e-8

    @classmethod
    def start(cls, disorder: DisorderSample, track_w: bool = False) -> "ConditionalState":
        W = disorder.W.copy() if track_w else None
        return cls(G=disorder.G, W=W)

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def k(self) -> int:
        """Index of the next step (1-based, so k = 1 before any deflation)."""
        return len(self.phi) + 1

    def rho_bar_apply(self, s: int, x: np.ndarray) -> np.ndarray:
        """rho_bar^(s) x for 0-based s."""
        p, z = self.phi[s], self.zeta[s]
        px = p @ x
        return (z * px + p * (z @ x) - (z @ p) * px * p) / np.sqrt(self.n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """G^(k) x for the current k."""
        y = self.G @ x
        for s in range(len(self.zeta)):
            y -= self.rho_bar_apply(s, x)
        return y

    def dense_G(self) -> np.ndarray:
        """G^(k) as a dense matrix (testing aid)."""
        Gk = self.G.copy()
        rn = np.sqrt(self.n)
        for p, z in zip(self.phi, self.zeta):
            Gk -= (np.outer(z, p) + np.outer(p, z) - (z @ p) * np.outer(p, p)) / rn
        return Gk


def deflate_step(state: ConditionalState, next_phi: np.ndarray) -> ConditionalState:
    """Append phi^(k), compute zeta^(k) = G^(k) sqrt(n) phi^(k), advance to k + 1."""
    phi = np.array(next_phi, dtype=float)
    flagged = False
    if state.phi:
        F = np.asarray(state.phi)
        off = np.abs(F @ phi).max()
        if off > state.ortho_tol or abs(np.linalg.norm(phi) - 1.0) > state.ortho_tol:
            phi = gram_schmidt_next(phi, state.phi)
            flagged = True
    elif abs(np.linalg.norm(phi) - 1.0) > state.ortho_tol:
        phi = phi / np.linalg.norm(phi)
        flagged = True
    rn = np.sqrt(state.n)
    zeta = state.apply(phi) * rn
    if state.W is not None:
        Wp = state.W @ phi
        WTp = state.W.T @ phi
        state.W -= np.outer(Wp, phi) + np.outer(phi, WTp) - (phi @ Wp) * np.outer(phi, phi)
    state.phi.append(phi)
    state.zeta.append(zeta)
    state.reorthogonalized.append(flagged)
    return state
