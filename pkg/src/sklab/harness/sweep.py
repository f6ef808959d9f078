"""Disorder-seed Monte Carlo over parameter grids.

Every (grid point, seed) pair is one task.  Tasks go to a process pool in a
fixed order and results come back through ``Executor.map``, which preserves
submission order, so the reduction below never depends on completion order or
on the number of workers.
"""
from __future__ import annotations

import itertools
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from threadpoolctl import threadpool_limits

from . import statistics as st
from .config import ExperimentConfig
from .emit import ResultRow

KINDS = ("exact", "amp", "spectral")


@dataclass(frozen=True)
class Task:
    kind: str
    beta: float
    h: float
    n: int
    seed: int
    selected: tuple = ()
    k_max: int = 16
    glauber_sweeps: int = 0
    burn_in: int = 0
    variant: str = "conditional"


def evaluate(task: Task) -> dict:
    if task.kind == "exact":
        return st.exact_statistics(task.beta, task.h, task.n, task.seed, task.selected)
    if task.kind == "amp":
        return st.amp_statistics(task.beta, task.h, task.n, task.seed, task.k_max, task.selected,
                                 task.glauber_sweeps, task.burn_in, task.variant)
    if task.kind == "spectral":
        return st.spectral_statistics(task.beta, task.h, task.n, task.seed, task.selected)
    raise ValueError(f"unknown kind {task.kind!r}")


def _guarded(task: Task):
    with threadpool_limits(1):
        try:
            return evaluate(task), None
        except Exception:
            return None, traceback.format_exc(limit=3)


def map_tasks(tasks: list[Task], workers: int = 1) -> list[tuple[dict | None, str | None]]:
    """Evaluate tasks, returning (values, error) in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_guarded(t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_guarded, tasks, chunksize=chunk))


def mean_stderr(values: list[float]) -> tuple[float, float]:
    k = len(values)
    mean = math.fsum(values) / k
    if k == 1 or not math.isfinite(mean):
        return mean, 0.0 if k == 1 else float("nan")
    var = math.fsum((x - mean) ** 2 for x in values) / (k * (k - 1))
    return mean, math.sqrt(var)


def aggregate(experiment: str, params: dict, results: list, order: tuple) -> list[ResultRow]:
    """Seed-ordered reduction to one row per statistic (NaN entries are dropped)."""
    ok = [r for r, _ in results if r is not None]
    seen = {k for r in ok for k in r}
    names = [s for s in order if s in seen] + sorted(seen - set(order))
    rows = []
    for name in names:
        vals = [r[name] for r in ok if name in r and not math.isnan(r[name])]
        if vals:
            mean, se = mean_stderr(vals)
            rows.append(ResultRow.make(experiment, params, name, mean, se, len(vals)))
    failed = sum(err is not None for _, err in results)
    if failed:
        rows.append(ResultRow.make(experiment, params, "failed_seeds", failed, 0.0, len(results)))
    return rows


@dataclass
class SweepResult:
    rows: list[ResultRow]
    failures: list[tuple[dict, int, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _point_params(kind: str, beta: float, h: float, n: int, cfg: ExperimentConfig) -> dict:
    p = {"beta": beta, "h": h, "n": n}
    if kind == "amp":
        p["k_max"] = cfg.k_max
        p["variant"] = cfg.variant
    return p


def run_sweep(config: ExperimentConfig, kind: str | None = None) -> SweepResult:
    kind = kind or (config.command if config.command in KINDS else config.kind)
    if kind not in KINDS:
        raise ValueError(f"sweep kind must be one of {KINDS}")
    selected = tuple(config.statistics)
    unknown = set(selected) - set(st.REGISTRY[kind])
    if unknown:
        raise ValueError(f"unknown {kind} statistics: {sorted(unknown)}")
    points = list(itertools.product(config.beta, config.h, config.n))
    seeds = [config.seed + s for s in range(config.samples)]
    tasks = [Task(kind, b, h, n, s, selected, config.k_max, config.glauber_sweeps, config.burn_in,
                  config.variant)
             for b, h, n in points for s in seeds]
    results = map_tasks(tasks, config.effective_workers)
    rows, failures = [], []
    for i, (b, h, n) in enumerate(points):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        params = _point_params(kind, b, h, n, config)
        rows.extend(aggregate(config.command, params, chunk, st.REGISTRY[kind]))
        failures.extend((params, s, err) for s, (_, err) in zip(seeds, chunk) if err is not None)
    return SweepResult(rows, failures)


def run_scalar(config: ExperimentConfig) -> SweepResult:
    rows = []
    for b, h in itertools.product(config.beta, config.h):
        vals = st.scalar_statistics(b, h, selected=tuple(config.statistics))
        params = {"beta": b, "h": h}
        rows.extend(ResultRow.make(config.command, params, k, v) for k, v in vals.items())
    return SweepResult(rows)
