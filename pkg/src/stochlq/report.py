"""Result reports and their on-disk layout.

``--format json`` writes ``<out>/<command>.json``: a single document with the
scalar values, the checks and every table.  ``--format csv`` writes
``<out>/<command>.csv`` (``key,value`` rows for scalars and checks) plus one
``<out>/<command>_<table>.csv`` per table.  Neither format carries timestamps,
so identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass
class ResultReport:
    command: str
    config_hash: str = ""
    seed: int = 0
    values: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, value: float, tolerance: float, note: str = "", passed: bool | None = None) -> Check:
        value = float(value)
        ok = bool(value <= tolerance) if passed is None else bool(passed)
        c = Check(name, value, float(tolerance), ok, note)
        self.checks.append(c)
        return c

    def add_table(self, name: str, columns: list[str], rows: list[list]):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "passed": self.passed,
            "values": _plain(self.values),
            "checks": [_plain(c.__dict__) for c in self.checks],
            "tables": {k: {"columns": c, "rows": _plain(r)} for k, (c, r) in sorted(self.tables.items())},
            "messages": list(self.messages),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def render_json(report: ResultReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def render_csv(report: ResultReport) -> dict[str, str]:
    """File name -> CSV text."""
    rows = [["passed", report.passed]] if report.checks else []
    rows += [[k, v] for k, v in sorted(_plain(report.values).items()) if not isinstance(v, (dict, list))]
    rows += [[f"check:{c.name}", c.value] for c in report.checks]
    files = {f"{report.command}.csv": _csv_text(["key", "value"], rows)}
    for name, (columns, table_rows) in sorted(report.tables.items()):
        files[f"{report.command}_{name}.csv"] = _csv_text(columns, table_rows)
    return files


def emit_report(report: ResultReport, fmt: str = "json", out: str | Path | None = None) -> list[Path] | str:
    """Write the report under ``out``; without ``out`` return the rendered text."""
    if fmt == "json":
        files = {f"{report.command}.json": render_json(report)}
    elif fmt == "csv":
        files = render_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if out is None:
        return "".join(files.values())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        written.append(path)
    return written
