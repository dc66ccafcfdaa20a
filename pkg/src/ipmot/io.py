"""CSV and JSON reading and writing.

Point files are UTF-8 CSV with one point per row. A first row that does
not parse as numbers is a header; a header column named ``weight`` holds
point weights and one named ``label`` holds integer class labels. Every
other column is a coordinate. Matrices are written with 17 significant
digits so they reload bit-for-bit, and every write goes through a
temporary file that is renamed into place.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .class_ratio import LabeledDataset
from .errors import DataError, NegativeWeight, ParseError, RaggedRows
from .measures import DiscreteMeasure

WEIGHT_COLUMN = "weight"
LABEL_COLUMN = "label"
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class PointTable:
    """Parsed point file: coordinates plus the optional weight and label columns."""

    points: np.ndarray
    weights: np.ndarray | None
    labels: np.ndarray | None
    header: tuple[str, ...] | None


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_point_table(path) -> PointTable:
    """Parse a point file.

    ``ParseError.row`` counts data rows from 1 (the header is not counted)
    and ``ParseError.column`` counts columns from 1.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc.reason})") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c.strip()) for c in rows[0]):
        header = tuple(c.strip() for c in rows[0])
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise RaggedRows(f"{path}: data row {i} has {len(row)} fields, expected {width}", row=i)
        for j, cell in enumerate(row, start=1):
            try:
                values[i - 1, j - 1] = float(cell.strip())
            except ValueError:
                raise ParseError(f"{path}: data row {i}, column {j}: cannot parse {cell!r} as a number",
                                 row=i, column=j) from None
            if not math.isfinite(values[i - 1, j - 1]):
                raise ParseError(f"{path}: data row {i}, column {j}: non-finite value {cell!r}", row=i, column=j)
    names = [h.lower() for h in header] if header is not None else [""] * width
    for special in (WEIGHT_COLUMN, LABEL_COLUMN):
        if names.count(special) > 1:
            raise ParseError(f"{path}: column {special!r} appears more than once")
    w_idx = names.index(WEIGHT_COLUMN) if WEIGHT_COLUMN in names else None
    l_idx = names.index(LABEL_COLUMN) if LABEL_COLUMN in names else None
    coord_idx = [j for j in range(width) if j not in (w_idx, l_idx)]
    if not coord_idx:
        raise ParseError(f"{path}: no coordinate columns")
    weights = labels = None
    if w_idx is not None:
        weights = values[:, w_idx]
        bad = np.nonzero(weights < 0)[0]
        if bad.size:
            raise NegativeWeight(f"{path}: negative weight in data row {bad[0] + 1}")
    if l_idx is not None:
        labels = values[:, l_idx]
        bad = np.nonzero(labels != np.round(labels))[0]
        if bad.size:
            raise ParseError(f"{path}: non-integer label in data row {bad[0] + 1}", row=int(bad[0]) + 1,
                             column=l_idx + 1)
        labels = labels.astype(int)
    return PointTable(values[:, coord_idx], weights, labels, header)


def load_points_csv(path, total_mass: float = 1.0) -> DiscreteMeasure:
    """Load a measure; without a weight column the weights are uniform with sum ``total_mass``."""
    table = read_point_table(path)
    m = table.points.shape[0]
    weights = table.weights if table.weights is not None else np.full(m, float(total_mass) / m)
    return DiscreteMeasure(table.points, weights)


def load_labeled_csv(path, n_classes: int | None = None) -> LabeledDataset:
    """Load a labelled training set; the file must have a ``label`` column."""
    table = read_point_table(path)
    if table.labels is None:
        raise ParseError(f"{path}: a labelled dataset needs a {LABEL_COLUMN!r} column")
    return LabeledDataset(table.points, table.labels, n_classes)


def load_matrix_csv(path) -> np.ndarray:
    """Read a headerless numeric CSV written by :func:`write_matrix_csv`."""
    table = read_point_table(path)
    return table.points


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_number(v) -> str:
    return FLOAT_FORMAT % float(v)


def write_matrix_csv(path, matrix, header=None):
    """Write a 2-D array (a 1-D array becomes one column)."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    lines = [",".join(header)] if header is not None else []
    lines += [",".join(format_number(v) for v in row) for row in M]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_table_csv(path, header, rows):
    """Write rows of mixed strings and numbers under a header."""
    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v)).lower()
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return format_number(v)
        return str(v)

    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def min_max_scale(matrix) -> np.ndarray:
    """Rescale entries to ``[0, 1]``; a constant matrix maps to zeros."""
    M = np.asarray(matrix, dtype=float)
    lo, hi = float(M.min()), float(M.max())
    if hi <= lo:
        return np.zeros_like(M)
    return (M - lo) / (hi - lo)


def to_jsonable(obj):
    """Convert numpy values and containers to plain JSON types.

    Non-finite floats become the strings ``"nan"``, ``"inf"`` and ``"-inf"``
    so reports stay valid JSON.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(path, obj):
    """Write ``obj`` as JSON with sorted keys."""
    _atomic_write(path, json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n")
