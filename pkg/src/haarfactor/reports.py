"""Suite reports, JSON/CSV emission, and atomic artifact writes.

Reports are deterministic given config and seed: wall-clock readings live
in a separate metadata field that is excluded from content comparisons.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

REPORT_SCHEMA_VERSION = 1

CSV_COLUMNS = ("suite", "case", "n", "value", "bound", "margin", "passed")


def jsonable(obj):
    """Recursively convert numpy scalars and arrays for json.dumps."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


@dataclass
class CaseResult:
    case: str
    passed: bool
    rows: list = field(default_factory=list)  # (n, value, bound, margin)

    @property
    def worst_margin(self) -> Optional[float]:
        margins = [r[3] for r in self.rows if r[3] is not None]
        return min(margins) if margins else None


@dataclass
class SuiteReport:
    suite: str
    seed: int
    cases: list[CaseResult] = field(default_factory=list)
    meta: dict = field(default_factory=dict)  # wall-clock etc., not content

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def content_json(self) -> dict:
        return jsonable(
            {
                "schema_version": REPORT_SCHEMA_VERSION,
                "suite": self.suite,
                "seed": self.seed,
                "passed": self.passed,
                "cases": [
                    {
                        "case": c.case,
                        "passed": c.passed,
                        "worst_margin": c.worst_margin,
                        "rows": c.rows,
                    }
                    for c in self.cases
                ],
            }
        )

    def to_json(self) -> dict:
        out = self.content_json()
        out["meta"] = jsonable(self.meta)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CSV_COLUMNS)
        for c in self.cases:
            for n, value, bound, margin in c.rows:
                writer.writerow(
                    [self.suite, c.case, n, value, bound, margin, c.passed]
                )
        return buf.getvalue()

    @staticmethod
    def from_json(data) -> "SuiteReport":
        report = SuiteReport(
            suite=data["suite"], seed=data["seed"], meta=data.get("meta", {})
        )
        for c in data["cases"]:
            report.cases.append(
                CaseResult(
                    case=c["case"],
                    passed=c["passed"],
                    rows=[tuple(r) for r in c["rows"]],
                )
            )
        return report


def atomic_write_text(path: str, text: str):
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(report: SuiteReport, path: str, fmt: str = "json"):
    if fmt == "json":
        atomic_write_text(path, json.dumps(report.to_json(), indent=2) + "\n")
    elif fmt == "csv":
        atomic_write_text(path, report.to_csv())
    else:
        raise ValueError(f"unknown format {fmt!r}")
