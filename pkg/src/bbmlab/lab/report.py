"""Experiment reports and their CSV / manifest serialisation."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from bbmlab.errors import BBMError


@dataclass
class ExperimentReport:
    """One experiment's output table plus fitted quantities and echoed config.

    ``columns``/``rows`` form the main table (estimates always come with an
    ``se`` column).  ``summary`` holds fitted slopes, correlations, confidence
    limits and acceptance verdicts; ``config`` echoes every parameter used.
    """

    name: str
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    passed: bool | None = None
    extra_tables: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def summary_rows(self) -> list:
        rows = [["config", k, v] for k, v in self.config.items()]
        rows += [["result", k, v] for k, v in self.summary.items()]
        rows.append(["result", "passed", "" if self.passed is None else self.passed])
        rows += [["note", str(i), n] for i, n in enumerate(self.notes)]
        return rows

    def write(self, out_dir: str) -> list:
        """Write ``<name>.csv``, ``<name>_summary.csv`` and any extra tables; return the paths."""
        paths = [os.path.join(out_dir, f"{self.name}.csv"),
                 os.path.join(out_dir, f"{self.name}_summary.csv")]
        write_csv(self.columns, self.rows, paths[0])
        write_csv(["section", "key", "value"], self.summary_rows(), paths[1])
        for tag, (cols, rows) in sorted(self.extra_tables.items()):
            p = os.path.join(out_dir, f"{self.name}_{tag}.csv")
            write_csv(cols, rows, p)
            paths.append(p)
        return paths


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if hasattr(v, "dtype"):  # numpy scalar
        return format_value(v.item())
    if isinstance(v, (tuple, list)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def render_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(list(columns))
    n = len(columns)
    for r in rows:
        if len(r) != n:
            raise BBMError(f"row has {len(r)} fields, header has {n}")
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    except OSError as e:
        raise BBMError(f"cannot write {path}: {e.strerror}") from e
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(columns: Sequence[str], rows: Iterable[Sequence], path: str) -> None:
    """RFC 4180 CSV with LF line ends and round-trip exact floats."""
    atomic_write(path, render_csv(columns, rows))
