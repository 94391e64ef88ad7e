"""CSV panel ingestion, fixed-effect preprocessing and report emission.

The loader is deliberately strict: UTF-8, one header row, decimal-point
numerals, and typed errors naming the offending row/column. Cluster and
absorb columns are kept as verbatim strings; all other referenced columns
must parse as floats. Reports are JSON trees that round-trip losslessly and
are written atomically (temp file + rename).
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .data import ClusterPartition, RegressionProblem
from .exceptions import (
    DuplicateHeaderError,
    EmptyFileError,
    MissingColumnError,
    NonNumericCellError,
)

__all__ = [
    "DatasetSpec",
    "LoadedDataset",
    "load_csv",
    "load_dataset",
    "within_transform",
    "DroppedColumnWarning",
    "DegenerateAbsorbGroupWarning",
    "write_report",
    "write_text_atomic",
    "to_jsonable",
]


class DroppedColumnWarning(UserWarning):
    """A regressor column became numerically zero under demeaning."""

    def __init__(self, role: str, index: int, name: str | None = None):
        self.role = role
        self.index = index
        self.name = name
        label = name if name is not None else f"{role}[{index}]"
        super().__init__(f"column {label} is constant within absorb groups; dropped")


class DegenerateAbsorbGroupWarning(UserWarning):
    """Absorb groups of size one demean to exact zero rows."""


@dataclass(frozen=True)
class DatasetSpec:
    """Which columns of a CSV file play which regression role."""

    path: str
    y_col: str
    x_cols: tuple
    cluster_col: str
    w_cols: tuple = ()
    absorb_col: str | None = None
    interact_time_col: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_cols", tuple(self.x_cols))
        object.__setattr__(self, "w_cols", tuple(self.w_cols))
        roles = [self.y_col, *self.x_cols, *self.w_cols, self.cluster_col]
        if self.absorb_col is not None:
            roles.append(self.absorb_col)
        if self.interact_time_col is not None:
            roles.append(self.interact_time_col)
        seen = set()
        for name in roles:
            if name in seen:
                raise ValueError(f"column {name!r} is named in two roles")
            seen.add(name)
        if not self.x_cols:
            raise ValueError("at least one focal column is required")


@dataclass(frozen=True, eq=False)
class LoadedDataset:
    """A parsed dataset plus the column names of the assembled problem."""

    problem: RegressionProblem
    x_names: tuple
    w_names: tuple
    absorb: tuple | None = None


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise NonNumericCellError(row, col, raw) from None


def load_dataset(spec: DatasetSpec) -> LoadedDataset:
    """Read a CSV file into a regression problem, expanding interactions.

    When ``interact_time_col`` is set, each control column is expanded into
    one column per period (lexicographic period order), equal to the
    control value in the row's own period and zero elsewhere.
    """
    with open(spec.path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{spec.path}: no header row") from None
        seen = set()
        for name in header:
            if name in seen:
                raise DuplicateHeaderError(name)
            seen.add(name)
        rows = list(reader)
    if not rows:
        raise EmptyFileError(f"{spec.path}: no data rows")

    col_index = {name: i for i, name in enumerate(header)}
    needed = [spec.y_col, *spec.x_cols, *spec.w_cols, spec.cluster_col]
    if spec.absorb_col is not None:
        needed.append(spec.absorb_col)
    if spec.interact_time_col is not None:
        needed.append(spec.interact_time_col)
    for name in needed:
        if name not in col_index:
            raise MissingColumnError(name)

    n = len(rows)
    y = np.empty(n)
    x = np.empty((n, len(spec.x_cols)))
    w = np.empty((n, len(spec.w_cols)))
    clusters = []
    absorb = [] if spec.absorb_col is not None else None
    periods = [] if spec.interact_time_col is not None else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise NonNumericCellError(r, "<row>", f"{len(row)} fields, expected {len(header)}")
        y[r] = _parse_cell(row[col_index[spec.y_col]], r, spec.y_col)
        for j, name in enumerate(spec.x_cols):
            x[r, j] = _parse_cell(row[col_index[name]], r, name)
        for j, name in enumerate(spec.w_cols):
            w[r, j] = _parse_cell(row[col_index[name]], r, name)
        clusters.append(row[col_index[spec.cluster_col]])
        if absorb is not None:
            absorb.append(row[col_index[spec.absorb_col]])
        if periods is not None:
            periods.append(row[col_index[spec.interact_time_col]])

    w_names = spec.w_cols
    if periods is not None and spec.w_cols:
        levels = sorted(set(periods))
        expanded = np.zeros((n, len(spec.w_cols) * len(levels)))
        slot = {lev: t for t, lev in enumerate(levels)}
        for r in range(n):
            t = slot[periods[r]]
            base = t * len(spec.w_cols)
            expanded[r, base : base + len(spec.w_cols)] = w[r]
        w = expanded
        w_names = tuple(
            f"{name}:{lev}" for lev in levels for name in spec.w_cols
        )

    problem = RegressionProblem(y, x, w, ClusterPartition(clusters))
    return LoadedDataset(
        problem=problem,
        x_names=spec.x_cols,
        w_names=w_names,
        absorb=tuple(absorb) if absorb is not None else None,
    )


def load_csv(spec: DatasetSpec) -> RegressionProblem:
    """Read a CSV file into a RegressionProblem (see ``load_dataset``)."""
    return load_dataset(spec).problem


DROP_NORM_RATIO = 1e-12


def within_transform(
    problem: RegressionProblem,
    absorb,
    x_names: tuple | None = None,
    w_names: tuple | None = None,
) -> RegressionProblem:
    """Subtract absorb-group means from y and every regressor column.

    Columns whose transformed norm falls below 1e-12 of the original are
    constant within groups and are dropped with a ``DroppedColumnWarning``.
    Absorb groups need not coincide with clusters; size-1 groups demean to
    zero rows and are reported via ``DegenerateAbsorbGroupWarning``.
    """
    absorb = list(absorb)
    n = problem.n_obs
    if len(absorb) != n:
        raise ValueError(f"absorb labels must cover all {n} rows")
    groups: dict = {}
    for i, lab in enumerate(absorb):
        groups.setdefault(lab, []).append(i)
    singletons = sum(1 for idx in groups.values() if len(idx) == 1)
    if singletons:
        warnings.warn(
            f"{singletons} absorb group(s) of size 1 demean to zero rows",
            DegenerateAbsorbGroupWarning,
            stacklevel=2,
        )

    def demean(arr: np.ndarray) -> np.ndarray:
        out = np.array(arr, dtype=float)
        for idx in groups.values():
            out[idx] -= out[idx].mean(axis=0)
        return out

    y_t = demean(problem.y)
    x_t = demean(problem.X)
    w_t = demean(problem.W)

    def keep_columns(orig, transformed, role, names):
        keep = []
        for j in range(orig.shape[1]):
            if np.linalg.norm(transformed[:, j]) < DROP_NORM_RATIO * np.linalg.norm(
                orig[:, j]
            ):
                warnings.warn(
                    DroppedColumnWarning(
                        role, j, names[j] if names is not None else None
                    ),
                    stacklevel=3,
                )
            else:
                keep.append(j)
        return keep

    x_keep = keep_columns(problem.X, x_t, "x", x_names)
    w_keep = keep_columns(problem.W, w_t, "w", w_names)
    if not x_keep:
        raise ValueError("all focal columns are constant within absorb groups")
    return RegressionProblem(
        y_t, x_t[:, x_keep], w_t[:, w_keep], problem.partition
    )


# ---------------------------------------------------------------------------
# report emission


def to_jsonable(obj):
    """Recursively convert numpy containers to plain JSON-compatible values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def render_report(envelope: dict) -> str:
    return json.dumps(to_jsonable(envelope), indent=2, sort_keys=False) + "\n"


def write_text_atomic(path: str, text: str) -> None:
    """Write text via a temp file in the target directory plus rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(path: str, envelope: dict) -> None:
    """Serialize an envelope to JSON and write it atomically."""
    write_text_atomic(path, render_report(envelope))
