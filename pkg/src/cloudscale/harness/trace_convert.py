"""Convert a raw task-event CSV into the simulator's trace schema.

The output has the header ``timestamp_s,cpu_request,duration_s``, rows sorted
by timestamp, timestamps rebased so the first task starts at zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from ..simcluster import TRACE_COLUMNS, TraceValidationError

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6}


@dataclass
class ConvertReport:
    rows_in: int
    rows_out: int
    skipped: list


def convert_trace(
    src,
    dst,
    time_col: str = "time",
    cpu_col: str = "cpu_request",
    duration_col: str | None = "duration",
    end_col: str | None = None,
    time_unit: str = "s",
    rebase: bool = True,
) -> ConvertReport:
    """Map columns of ``src`` onto the trace schema and write ``dst``.

    Durations come from ``duration_col``, or from ``end_col - time_col`` when
    ``end_col`` is given. Both are in ``time_unit``. Rows that fail to parse
    or yield a non-positive cpu request or duration are skipped.
    """
    if time_unit not in TIME_UNITS:
        raise ValueError(f"time_unit must be one of {sorted(TIME_UNITS)}")
    unit = TIME_UNITS[time_unit]
    with open(src, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        need = [time_col, cpu_col, end_col if end_col else duration_col]
        missing = [c for c in need if c not in fields]
        if missing:
            raise TraceValidationError(f"{src}: missing columns {missing}")
        rows = list(reader)

    out, skipped = [], []
    for rowno, row in enumerate(rows, start=1):
        try:
            t = float(row[time_col]) * unit
            cpu = float(row[cpu_col])
            if end_col:
                dur = float(row[end_col]) * unit - t
            else:
                dur = float(row[duration_col]) * unit
        except (TypeError, ValueError):
            skipped.append(rowno)
            continue
        if not all(map(math.isfinite, (t, cpu, dur))) or cpu <= 0 or dur <= 0:
            skipped.append(rowno)
            continue
        out.append((t, cpu, dur))

    out.sort(key=lambda r: r[0])
    t0 = out[0][0] if out and rebase else 0.0
    Path(dst).parent.mkdir(parents=True, exist_ok=True)
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, cpu, dur in out:
            w.writerow([f"{t - t0:.6f}", repr(cpu), f"{dur:.6f}"])
    return ConvertReport(len(rows), len(out), skipped)
