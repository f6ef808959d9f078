"""Command-line entry point: ``sklab <command> [--config path] [overrides]``."""
from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from .config import COMMANDS, load_config
from .emit import ResultRow, emit, to_csv
from .scaling import mann_kendall_decreasing, scaling_study
from .sweep import SweepResult, run_scalar, run_sweep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sklab", description="SK correlation-matrix numerics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--beta", help="inverse temperature(s), comma separated")
    ap.add_argument("--h", help="external field(s), comma separated")
    ap.add_argument("--n", help="system size(s), comma separated")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--kmax", type=int, dest="k_max")
    ap.add_argument("--variant", choices=("conditional", "tilde", "prime"))
    ap.add_argument("--out", help="output path; .csv or .json suffix picks the format, none writes both")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--statistics", help="restrict to these statistics, comma separated")
    ap.add_argument("--statistic", help="statistic for the scaling command")
    ap.add_argument("--kind", choices=("exact", "amp", "spectral"), help="what the sweep command runs")
    ap.add_argument("--glauber-sweeps", type=int, dest="glauber_sweeps")
    ap.add_argument("--burn-in", type=int, dest="burn_in")
    return ap


def run_scaling(cfg) -> SweepResult:
    if not cfg.statistic:
        raise ValueError("the scaling command needs --statistic")
    rows = []
    for b, h in itertools.product(cfg.beta, cfg.h):
        res = scaling_study(cfg.statistic, cfg.n, cfg.samples, b, h, cfg.seed, cfg.effective_workers)
        params = {"beta": b, "h": h}
        rows.extend(res.rows(cfg.command, params))
        _, p = mann_kendall_decreasing(res.means)
        rows.append(ResultRow.make(cfg.command, {**params, "n_list": list(cfg.n)},
                                   f"mann_kendall_p:{cfg.statistic}", p, 0.0, len(cfg.n)))
    return SweepResult(rows)


def execute(cfg) -> SweepResult:
    if cfg.command == "scalar":
        return run_scalar(cfg)
    if cfg.command == "scaling":
        return run_scaling(cfg)
    return run_sweep(cfg)


def write(rows: list[ResultRow], out: str | None) -> list[Path]:
    if out is None:
        sys.stdout.write(to_csv(rows))
        return []
    path = Path(out)
    if path.suffix.lower() in (".csv", ".json"):
        return [emit(rows, path)]
    return [emit(rows, path.with_suffix(".csv")), emit(rows, path.with_suffix(".json"))]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        cfg = load_config(args.config, overrides)
        result = execute(cfg)
        write(result.rows, cfg.out)
    except (ValueError, OSError) as exc:
        print(f"sklab: error: {exc}", file=sys.stderr)
        return 1
    for params, seed, err in result.failures:
        print(f"sklab: seed {seed} failed at {params}:\n{err}", file=sys.stderr)
    return 2 if result.partial else 0


if __name__ == "__main__":
    sys.exit(main())
