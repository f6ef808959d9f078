"""Log-log slope fits with bootstrap intervals, and a monotone-trend test."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .emit import ResultRow
from .sweep import Task, map_tasks

N_BOOT = 1000


@dataclass
class ScalingResult:
    statistic: str
    n_list: tuple
    values: np.ndarray       # (len(n_list), samples), rows share seed indices
    means: np.ndarray
    stderrs: np.ndarray
    slope: float
    ci: tuple[float, float]
    boot_slopes: np.ndarray

    def rows(self, experiment: str, params: dict) -> list[ResultRow]:
        out = []
        for n, mean, se in zip(self.n_list, self.means, self.stderrs):
            out.append(ResultRow.make(experiment, {**params, "n": n}, self.statistic, mean, se,
                                      self.values.shape[1]))
        base = {**params, "n_list": list(self.n_list)}
        k = self.values.shape[1]
        out.append(ResultRow.make(experiment, base, f"slope:{self.statistic}", self.slope,
                                  float(np.std(self.boot_slopes, ddof=1)), k))
        out.append(ResultRow.make(experiment, base, f"slope_ci_low:{self.statistic}", self.ci[0], 0.0, k))
        out.append(ResultRow.make(experiment, base, f"slope_ci_high:{self.statistic}", self.ci[1], 0.0, k))
        return out


def ols_slope(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def _log_means(means: np.ndarray) -> np.ndarray:
    if np.any(~(means > 0)):
        raise ValueError("nonpositive mean statistic; log-log fit undefined")
    return np.log(means)


def fit_scaling(statistic: str, n_list, values: np.ndarray, n_boot: int = N_BOOT,
                seed: int = 0, level: float = 0.95) -> ScalingResult:
    """Slope of log(mean) against log n; CI from resampling seed indices jointly over n."""
    values = np.asarray(values, dtype=float)
    n_list = tuple(int(n) for n in n_list)
    if values.shape[0] != len(n_list) or len(n_list) < 2:
        raise ValueError("need one row of samples per n, at least two n")
    k = values.shape[1]
    x = np.log(np.asarray(n_list, dtype=float))
    means = values.mean(axis=1)
    stderrs = values.std(axis=1, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(len(n_list))
    slope = ols_slope(x, _log_means(means))
    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, k, k)
        bm = values[:, idx].mean(axis=1)
        boot[b] = ols_slope(x, np.log(bm)) if np.all(bm > 0) else np.nan
    tail = 100 * (1 - level) / 2
    lo, hi = np.nanpercentile(boot, [tail, 100 - tail])
    return ScalingResult(statistic, n_list, values, means, stderrs, slope, (float(lo), float(hi)), boot)


def collect(statistic: str, n_list, samples: int, beta: float, h: float, seed: int = 0,
            workers: int = 1) -> np.ndarray:
    tasks = [Task("exact", beta, h, n, seed + s, (statistic,)) for n in n_list for s in range(samples)]
    res = map_tasks(tasks, workers)
    bad = [t for t, (_, err) in zip(tasks, res) if err is not None]
    if bad:
        raise RuntimeError(f"{len(bad)} instances failed, first at n={bad[0].n} seed={bad[0].seed}:\n"
                           + res[tasks.index(bad[0])][1])
    vals = np.array([r[statistic] for r, _ in res], dtype=float)
    return vals.reshape(len(n_list), samples)


def scaling_study(statistic: str, n_list, samples: int, beta: float, h: float, seed: int = 0,
                  workers: int = 1, n_boot: int = N_BOOT) -> ScalingResult:
    values = collect(statistic, n_list, samples, beta, h, seed, workers)
    return fit_scaling(statistic, n_list, values, n_boot, seed)


def mann_kendall_s(x) -> int:
    x = list(x)
    return sum(int(np.sign(x[j] - x[i])) for i, j in itertools.combinations(range(len(x)), 2))


def mann_kendall_decreasing(x) -> tuple[int, float]:
    """(S, one-sided p-value for a decreasing trend).

    Exact permutation null for up to 8 points (no ties assumed), normal
    approximation with continuity correction beyond that.
    """
    x = list(x)
    s = mann_kendall_s(x)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two points")
    if n <= 8:
        null = [mann_kendall_s(p) for p in itertools.permutations(range(n))]
        return s, sum(v <= s for v in null) / len(null)
    var = n * (n - 1) * (2 * n + 5) / 18
    return s, float(norm.cdf((s + 1) / math.sqrt(var)))
