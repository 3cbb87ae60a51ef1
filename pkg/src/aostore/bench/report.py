"""Report emission: ``report.json`` (everything) and two CSV tables.

``report.csv`` carries only columns that are a pure function of the experiment spec
and seeds, so re-running an experiment reproduces it byte for byte.
Timings and memory, which depend on the moment, go to ``measurements.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path
from typing import Any

from .. import __version__
from .experiments import ExperimentResult

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
MEASUREMENTS_CSV = "measurements.csv"


def columns(rows: list[dict[str, Any]]) -> list[str]:
    """Union of keys in first-seen order (stable across runs of one mode)."""
    seen: dict[str, None] = {}
    for row in rows:
        for k in row:
            seen.setdefault(k)
    return list(seen)


def format_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def parse_cell(s: str) -> Any:
    """Inverse of :func:`format_cell` for the types used in report rows."""
    if s == "":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def write_csv(path: Path, rows: list[dict[str, Any]]) -> None:
    cols = columns(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([format_cell(row.get(c)) for c in cols])


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def emit_report(result: ExperimentResult, path: str | Path) -> dict[str, Path]:
    """Write the three files into directory ``path`` and return their paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"json": out / REPORT_JSON, "csv": out / REPORT_CSV,
             "measurements": out / MEASUREMENTS_CSV}
    doc = {
        "artifact": "aostore",
        "version": __version__,
        "host": {"python": platform.python_version(), "machine": platform.machine()},
        "spec": result.spec.echo(),
        "partial": result.partial,
        "rows": result.rows,
        "measurements": result.measurements,
        "seeds": result.seeds,
        "extra": result.extra,
    }
    files["json"].write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    write_csv(files["csv"], result.rows)
    write_csv(files["measurements"], result.measurements)
    return files
