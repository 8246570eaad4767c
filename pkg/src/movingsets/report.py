"""Fixed-schema study records and deterministic CSV emission.

Every study flattens to rows with one shared column set, so one
downstream plotting path serves all of them.  Quantities a study does
not produce stay empty.  Metadata rides along as '#'-prefixed comment
lines above the header; the body (header + rows) is the deterministic
part that reruns must reproduce byte for byte.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = ["COLUMNS", "StudyRecord", "StudyReport", "parse_csv"]

COLUMNS = ("study", "n", "h", "gamma", "delta", "err_sup", "err_l2",
           "err_energy", "violation", "iterations", "residual", "flag")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(x)


@dataclass(frozen=True, eq=False)
class StudyRecord:
    """One CSV row; unset fields serialize as empty cells."""

    study: str
    n: int
    h: Optional[float] = None
    gamma: Optional[float] = None
    delta: Optional[float] = None
    err_sup: Optional[float] = None
    err_l2: Optional[float] = None
    err_energy: Optional[float] = None
    violation: Optional[float] = None
    iterations: Optional[int] = None
    residual: Optional[float] = None
    flag: Optional[bool] = None

    def row(self) -> str:
        return ",".join(_fmt(getattr(self, c)) for c in COLUMNS)


@dataclass(eq=False)
class StudyReport:
    """Records plus a metadata block and an overall pass flag."""

    study: str
    records: list
    metadata: dict = field(default_factory=dict)
    passed: bool = True

    def csv_body(self) -> str:
        lines = [",".join(COLUMNS)]
        lines.extend(r.row() for r in self.records)
        return "\n".join(lines) + "\n"

    def csv_text(self, extra_metadata: Optional[dict] = None) -> str:
        meta = dict(self.metadata)
        if extra_metadata:
            meta.update(extra_metadata)
        meta["passed"] = "1" if self.passed else "0"
        head = "".join(f"# {k}: {v}\n" for k, v in meta.items())
        return head + self.csv_body()

    def write(self, path, extra_metadata: Optional[dict] = None) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.csv_text(extra_metadata))
        return p


def parse_csv(text: str):
    """Split CSV text into (metadata dict, header list, row lists).

    The inverse of ``csv_text`` for these simple comma tables (no
    quoting; none of the emitted fields contain commas).
    """
    metadata = {}
    header = None
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                k, v = body.split(":", 1)
                metadata[k.strip()] = v.strip()
            continue
        cells = line.split(",")
        if header is None:
            header = cells
        else:
            rows.append(cells)
    return metadata, header, rows
