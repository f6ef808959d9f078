"""Flat key = value experiment configuration.

Recognized keys: command, beta, h, n, n_list, samples, seed, k_max, variant,
out, workers, statistics, statistic, kind, glauber_sweeps, burn_in.  List
values are comma separated; '#' starts a comment.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

COMMANDS = ("scalar", "exact", "amp", "spectral", "sweep", "scaling")


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, (int, float)):
        return (float(v),)
    if isinstance(v, str):
        return tuple(float(x) for x in v.split(",") if x.strip())
    return tuple(float(x) for x in v)


def _ints(v) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,)
    if isinstance(v, str):
        return tuple(int(x) for x in v.split(",") if x.strip())
    return tuple(int(x) for x in v)


def _names(v) -> tuple[str, ...]:
    if isinstance(v, str):
        return tuple(x.strip() for x in v.split(",") if x.strip())
    return tuple(v)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "exact"
    beta: tuple = (0.5,)
    h: tuple = (0.5,)
    n: tuple = (10,)
    samples: int = 1
    seed: int = 0
    k_max: int = 16
    variant: str = "conditional"
    out: str | None = None
    workers: int = 1
    statistics: tuple = ()
    statistic: str | None = None
    kind: str = "exact"
    glauber_sweeps: int = 0
    burn_in: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        for name in ("beta", "h", "n"):
            if not getattr(self, name):
                raise ValueError(f"grid {name!r} is empty")
        if self.variant not in ("conditional", "tilde", "prime"):
            raise ValueError(f"unknown AMP variant {self.variant!r}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def effective_workers(self) -> int:
        cap = os.environ.get("SKLAB_THREADS")
        if cap:
            return max(1, min(self.workers, int(cap)))
        return self.workers


_CONVERT = {
    "beta": _floats, "h": _floats, "n": _ints, "n_list": _ints, "samples": int,
    "seed": int, "k_max": int, "kmax": int, "variant": str, "out": str, "workers": int,
    "statistics": _names, "statistic": str, "kind": str, "command": str,
    "glauber_sweeps": int, "burn_in": int,
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def build_config(values: dict) -> ExperimentConfig:
    kw, extra = {}, {}
    for key, val in values.items():
        if val is None:
            continue
        if key not in _CONVERT:
            extra[key] = val
            continue
        conv = _CONVERT[key](val)
        if key == "n_list":
            key = "n"
        elif key == "kmax":
            key = "k_max"
        kw[key] = conv
    return ExperimentConfig(**kw, extra=extra)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
