"""Result rows and their CSV / JSON serialization."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

HEADER = ["experiment", "param_json", "statistic", "value", "stderr", "count"]


def _fmt(x: float) -> str:
    return repr(float(x))


def canonical_params(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    params: str          # canonical JSON of the parameter tuple
    statistic: str
    value: float
    stderr: float
    count: int

    def __post_init__(self):
        if not (self.stderr >= 0 or math.isnan(self.stderr)):
            raise ValueError("standard error must be >= 0")

    @classmethod
    def make(cls, experiment: str, params: dict, statistic: str, value: float,
             stderr: float = 0.0, count: int = 1) -> "ResultRow":
        return cls(experiment, canonical_params(params), statistic, float(value),
                   float(stderr), int(count))

    def cells(self) -> list[str]:
        return [self.experiment, self.params, self.statistic, _fmt(self.value),
                _fmt(self.stderr), str(self.count)]

    def same(self, other: "ResultRow") -> bool:
        """Equality that treats NaN as equal to NaN."""
        def eq(a, b):
            return a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
        return all(eq(getattr(self, f), getattr(other, f)) for f in
                   ("experiment", "params", "statistic", "value", "stderr", "count"))


def to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def from_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != HEADER:
        raise ValueError(f"unexpected header {header}")
    return [ResultRow(e, p, s, float(v), float(se), int(c)) for e, p, s, v, se, c in reader]


def _json_float(x: float):
    # JSON has no NaN/inf; keep them as strings that float() parses back
    return x if math.isfinite(x) else repr(x)


def to_json(rows: list[ResultRow]) -> str:
    out = [{"experiment": r.experiment, "params": json.loads(r.params), "statistic": r.statistic,
            "value": _json_float(r.value), "stderr": _json_float(r.stderr), "count": r.count}
           for r in rows]
    return json.dumps(out, indent=1, sort_keys=True) + "\n"


def from_json(text: str) -> list[ResultRow]:
    return [ResultRow(d["experiment"], canonical_params(d["params"]), d["statistic"],
                      float(d["value"]), float(d["stderr"]), int(d["count"]))
            for d in json.loads(text)]


def emit(rows: list[ResultRow], path, fmt: str | None = None) -> Path:
    """Write rows to ``path`` as csv or json (format from the suffix by default)."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower() or "csv"
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    text = to_csv(rows) if fmt == "csv" else to_json(rows)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path
