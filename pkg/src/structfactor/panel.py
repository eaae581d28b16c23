"""Multivariate time panels and their wide-CSV representation.

The on-disk layout is fixed: a header row whose first token names the time
column and whose remaining tokens name the series, then one row per time
point. Numbers are written in positional notation with 12 significant
digits so that identical panels always produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, MissingFile, NonFiniteInput, ParseError, RaggedRows

SIGNIFICANT_DIGITS = 12


def format_number(x: float) -> str:
    """Render ``x`` in fixed notation with 12 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteInput(f"cannot serialise non-finite value {x!r}")
    if x == 0.0:
        return "0"
    return np.format_float_positional(
        x, precision=SIGNIFICANT_DIGITS, unique=False, fractional=False, trim="-"
    )


@dataclass(frozen=True)
class TimePanel:
    """A p x T panel: one row per series, one column per time point."""

    values: np.ndarray
    series_names: tuple[str, ...]
    time_labels: tuple[str, ...]
    periodicity_s: int
    index_name: str = field(default="time")

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"panel values must be 2-D, got shape {values.shape}")
        p, T = values.shape
        if p < 1 or T < 2:
            raise InputError(f"panel needs p >= 1 and T >= 2, got p={p}, T={T}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("panel contains NaN or infinite values")
        names = tuple(str(n) for n in self.series_names)
        labels = tuple(str(t) for t in self.time_labels)
        if len(names) != p:
            raise InputError(f"{len(names)} series names for {p} series")
        if len(labels) != T:
            raise InputError(f"{len(labels)} time labels for {T} time points")
        if int(self.periodicity_s) < 2:
            raise InputError(f"periodicity must be >= 2, got {self.periodicity_s}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "series_names", names)
        object.__setattr__(self, "time_labels", labels)
        object.__setattr__(self, "periodicity_s", int(self.periodicity_s))

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(
        cls,
        values,
        periodicity_s: int = 2,
        series_names: Sequence[str] | None = None,
        time_labels: Sequence[str] | None = None,
    ) -> "TimePanel":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        p, T = values.shape
        if series_names is None:
            series_names = [f"y{i + 1}" for i in range(p)]
        if time_labels is None:
            time_labels = [str(t + 1) for t in range(T)]
        return cls(values, tuple(series_names), tuple(time_labels), periodicity_s)

    def head(self, n: int) -> "TimePanel":
        """The first ``n`` time points, keeping names and period."""
        return TimePanel(
            self.values[:, :n],
            self.series_names,
            self.time_labels[:n],
            self.periodicity_s,
            self.index_name,
        )

    def with_values(self, values: np.ndarray) -> "TimePanel":
        return TimePanel(values, self.series_names, self.time_labels, self.periodicity_s, self.index_name)


def read_csv(path: str | os.PathLike, periodicity_s: int = 2) -> TimePanel:
    """Read a wide CSV (time label column, then one column per series).

    Rows and columns in errors are 1-based: ``row`` counts data rows below
    the header, ``col`` counts file columns including the time column.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise InputError(f"{path}: header needs a time column and at least one series")
    width = len(header)
    labels: list[str] = []
    data: list[list[float]] = []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != width:
            raise RaggedRows(r, width, len(row))
        labels.append(row[0].strip())
        parsed = []
        for c, cell in enumerate(row[1:], start=2):
            try:
                x = float(cell)
            except ValueError:
                raise ParseError(r, c, f"data row {r}, column {c} ({header[c - 1]}): "
                                       f"not a number: {cell!r}") from None
            if not math.isfinite(x):
                raise ParseError(r, c, f"data row {r}, column {c} ({header[c - 1]}): "
                                       f"non-finite value {cell!r}")
            parsed.append(x)
        data.append(parsed)
    if len(data) < 2:
        raise InputError(f"{path}: need at least 2 data rows, found {len(data)}")
    values = np.array(data, dtype=float).T
    return TimePanel(values, tuple(header[1:]), tuple(labels), periodicity_s, header[0])


def wide_csv_text(index_name: str, time_labels: Sequence[str], series_names: Sequence[str],
                  values: np.ndarray) -> str:
    """Wide layout for any p x T array, including p = 0 (header and labels only)."""
    values = np.asarray(values, dtype=float).reshape(len(series_names), len(time_labels))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([index_name, *series_names])
    for t, label in enumerate(time_labels):
        writer.writerow([label, *(format_number(x) for x in values[:, t])])
    return buf.getvalue()


def panel_to_csv_text(panel: TimePanel) -> str:
    return wide_csv_text(panel.index_name, panel.time_labels, panel.series_names, panel.values)


def write_csv(panel: TimePanel, path: str | os.PathLike) -> None:
    text = panel_to_csv_text(panel)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def matrix_to_csv_text(matrix: np.ndarray, row_names: Sequence[str], col_names: Sequence[str],
                       corner: str = "") -> str:
    """Labelled matrix in the same number format as panels."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([corner, *col_names])
    for name, row in zip(row_names, matrix):
        writer.writerow([name, *(format_number(x) for x in row)])
    return buf.getvalue()
