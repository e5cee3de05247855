"""Per-iteration median and quartiles of metric columns across run directories."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .artifacts import read_metrics
from .runner import METRICS_FILE


class AlignmentError(ValueError):
    """Runs whose metric files do not share one iteration grid."""


def _metrics_path(run: str | Path) -> Path:
    p = Path(run)
    return p / METRICS_FILE if p.is_dir() else p


def summarize(
    runs: Sequence[str | Path], quantiles: Sequence[float] = (0.25, 0.5, 0.75)
) -> tuple[list[str], np.ndarray]:
    """Header and rows ``iteration, <metric>_q25, <metric>_median, <metric>_q75, ...``.

    Quantiles use linear interpolation between order statistics.
    """
    if not runs:
        raise ValueError("summarize needs at least one run")
    tables = []
    header = None
    for r in runs:
        h, data = read_metrics(_metrics_path(r))
        if header is None:
            header = h
        elif h != header:
            raise AlignmentError(f"{r}: header {h} differs from {header}")
        tables.append(data)
    ref = tables[0][:, 0]
    bad = [str(r) for r, t in zip(runs, tables) if t.shape[0] != len(ref) or not np.array_equal(t[:, 0], ref)]
    if bad:
        raise AlignmentError(f"iteration grids differ from {runs[0]}: {', '.join(bad)}")
    stack = np.stack(tables)  # (runs, rows, columns)
    names = [_qname(q) for q in quantiles]
    out_header = ["iteration"] + [f"{m}_{n}" for m in header[1:] for n in names]
    cols = [ref]
    for j in range(1, len(header)):
        qs = np.quantile(stack[:, :, j], quantiles, axis=0)
        cols.extend(qs)
    return out_header, np.column_stack(cols)


def _qname(q: float) -> str:
    if q == 0.5:
        return "median"
    return f"q{int(round(q * 100)):02d}"


def write_summary(target, header: list[str], rows: np.ndarray) -> None:
    """Write to a path or an open text stream."""
    if hasattr(target, "write"):
        _write_rows(target, header, rows)
        return
    with open(target, "w", newline="") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header: list[str], rows: np.ndarray) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])
