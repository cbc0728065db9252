"""Trial dataset container, validation, and CSV input/output.

The on-disk format is a comma-separated file with a mandatory header
``z,x,y_tau,y,delta,s,delta_b,b`` plus optional ``weight_s,weight_b``
columns.  Empty fields encode missing values.  Rows infected before the
biomarker measurement time (``y_tau = 1``) are excluded from the analysis
set at validation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError, SchemaError
from .model import DetectionLimit

__all__ = [
    "Observation",
    "TrialData",
    "ValidationReport",
    "validate_dataset",
    "read_dataset",
    "write_dataset",
]

COLUMNS = ("z", "x", "y_tau", "y", "delta", "s", "delta_b", "b")
WEIGHT_COLUMNS = ("weight_s", "weight_b")


@dataclass(frozen=True)
class Observation:
    """One subject.  ``s``/``b`` are None when unmeasured; ``weight_s`` and
    ``weight_b`` are optional known sampling probabilities."""

    z: int
    x: int
    y_tau: int
    y: int
    delta: int
    s: float | None
    delta_b: int
    b: float | None
    weight_s: float | None = None
    weight_b: float | None = None


@dataclass
class TrialData:
    """Columnar analysis set.  Missing biomarkers and weights are NaN."""

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    s: np.ndarray
    delta_b: np.ndarray
    b: np.ndarray
    limit: DetectionLimit
    n_levels: int
    weight_s: np.ndarray | None = None
    weight_b: np.ndarray | None = None
    y_tau: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.y_tau is None:
            self.y_tau = np.zeros(self.z.shape[0], dtype=np.int8)

    @property
    def n(self):
        return int(self.z.shape[0])

    def pattern_counts(self):
        """Counts of the four (delta_b, delta) missingness patterns."""
        out = {}
        for db in (1, 0):
            for d in (1, 0):
                out[(db, d)] = int(np.sum((self.delta_b == db) & (self.delta == d)))
        return out

    def has_user_weights(self):
        return self.weight_s is not None or self.weight_b is not None


@dataclass
class ValidationReport:
    n_input: int
    n_excluded_early: int
    n_analysis: int
    arm_sizes: dict
    pattern_counts: dict
    n_events: dict


def _as_arrays(rows):
    n = len(rows)
    z = np.empty(n, dtype=np.int8)
    x = np.empty(n, dtype=np.int64)
    y_tau = np.empty(n, dtype=np.int8)
    y = np.empty(n, dtype=np.int8)
    delta = np.empty(n, dtype=np.int8)
    delta_b = np.empty(n, dtype=np.int8)
    s = np.full(n, np.nan)
    b = np.full(n, np.nan)
    ws = np.full(n, np.nan)
    wb = np.full(n, np.nan)
    any_ws = any_wb = False
    for i, r in enumerate(rows):
        z[i], x[i], y_tau[i], y[i] = r.z, r.x, r.y_tau, r.y
        delta[i], delta_b[i] = r.delta, r.delta_b
        if r.s is not None:
            s[i] = r.s
        if r.b is not None:
            b[i] = r.b
        if r.weight_s is not None:
            ws[i] = r.weight_s
            any_ws = True
        if r.weight_b is not None:
            wb[i] = r.weight_b
            any_wb = True
    return z, x, y_tau, y, delta, s, delta_b, b, (ws if any_ws else None), (wb if any_wb else None)


def validate_dataset(rows, limit, n_levels=None):
    """Check schema invariants and return (analysis TrialData, report).

    ``rows`` is a sequence of Observation or an unvalidated TrialData.
    Early infections (y_tau = 1) are dropped from the analysis set; an
    empty treatment arm after exclusion is a design error.  Rows are
    stored in a canonical sort order so that results never depend on the
    order records arrive in.
    """
    if isinstance(rows, TrialData):
        z, x, y_tau, y = rows.z, rows.x, rows.y_tau, rows.y
        delta, s, delta_b, b = rows.delta, rows.s, rows.delta_b, rows.b
        ws, wb = rows.weight_s, rows.weight_b
        limit = rows.limit
        n_levels = n_levels or rows.n_levels
    else:
        rows = list(rows)
        z, x, y_tau, y, delta, s, delta_b, b, ws, wb = _as_arrays(rows)

    n = z.shape[0]
    if n == 0:
        raise SchemaError("dataset is empty")

    def bad(mask, what):
        if np.any(mask):
            i = int(np.argmax(mask))
            raise SchemaError(f"row {i}: {what}")

    for name, col in (("z", z), ("y_tau", y_tau), ("y", y), ("delta", delta), ("delta_b", delta_b)):
        bad(~np.isin(col, (0, 1)), f"{name} must be 0 or 1")
    if n_levels is None:
        n_levels = int(x.max()) if n else 1
    bad((x < 1) | (x > n_levels), f"x must be an integer level in 1..{n_levels}")
    bad((delta == 1) & np.isnan(s), "delta=1 but s is missing")
    bad((delta == 0) & ~np.isnan(s), "delta=0 but s is present")
    bad((delta_b == 1) & np.isnan(b), "delta_b=1 but b is missing")
    bad((delta_b == 0) & ~np.isnan(b), "delta_b=0 but b is present")
    bad(~np.isnan(s) & (s < limit.c), f"s below the detection limit {limit.c}")
    bad(~np.isnan(b) & (b < limit.c), f"b below the detection limit {limit.c}")
    bad((y_tau == 1) & (delta == 1), "y_tau=1 rows cannot have delta=1")
    if ws is not None:
        bad((delta == 1) & (~np.isfinite(ws) | (ws <= 0) | (ws > 1)), "weight_s must be in (0, 1] where delta=1")
    if wb is not None:
        bad((delta_b == 1) & (~np.isfinite(wb) | (wb <= 0) | (wb > 1)), "weight_b must be in (0, 1] where delta_b=1")

    keep = y_tau == 0
    # canonical row order: every permutation of the same rows yields the
    # same arrays, so downstream float reductions are bit-reproducible
    order = np.lexsort(tuple(
        col[keep] for col in (
            np.zeros_like(s) if wb is None else wb,
            np.zeros_like(s) if ws is None else ws,
            b, s, delta_b, delta, y, x, z,
        )
    ))
    sel = np.flatnonzero(keep)[order]
    data = TrialData(
        z=z[sel], x=x[sel], y=y[sel], delta=delta[sel], s=s[sel],
        delta_b=delta_b[sel], b=b[sel], limit=limit, n_levels=int(n_levels),
        weight_s=None if ws is None else ws[sel],
        weight_b=None if wb is None else wb[sel],
    )
    arm_sizes = {1: int(np.sum(data.z == 1)), 0: int(np.sum(data.z == 0))}
    if arm_sizes[0] == 0 or arm_sizes[1] == 0:
        raise DesignError("one treatment arm is empty after exclusions")
    report = ValidationReport(
        n_input=n,
        n_excluded_early=int(np.sum(~keep)),
        n_analysis=data.n,
        arm_sizes=arm_sizes,
        pattern_counts=data.pattern_counts(),
        n_events={1: int(np.sum(data.y[data.z == 1])), 0: int(np.sum(data.y[data.z == 0]))},
    )
    return data, report


def _parse_cell(text, row_i, name, kind):
    text = text.strip()
    if text == "":
        return None
    try:
        return kind(text)
    except ValueError:
        raise SchemaError(f"row {row_i}: cannot parse {name}={text!r}") from None


def read_dataset(path, limit=None, n_levels=None):
    """Read and validate a dataset file; returns (TrialData, report)."""
    limit = limit or DetectionLimit()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        expected = list(COLUMNS)
        if header[: len(expected)] != expected:
            raise SchemaError(f"{path}: header must start with {','.join(expected)}")
        extra = header[len(expected):]
        if any(col not in WEIGHT_COLUMNS for col in extra):
            raise SchemaError(f"{path}: unknown columns {extra}")
        idx = {name: i for i, name in enumerate(header)}
        rows = []
        for r, cells in enumerate(reader, start=1):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if len(cells) != len(header):
                raise SchemaError(f"row {r}: expected {len(header)} fields, got {len(cells)}")

            def get(name, kind, required=True):
                val = _parse_cell(cells[idx[name]], r, name, kind) if name in idx else None
                if required and val is None:
                    raise SchemaError(f"row {r}: {name} is required")
                return val

            rows.append(Observation(
                z=get("z", int), x=get("x", int), y_tau=get("y_tau", int),
                y=get("y", int), delta=get("delta", int),
                s=get("s", float, required=False), delta_b=get("delta_b", int),
                b=get("b", float, required=False),
                weight_s=get("weight_s", float, required=False) if "weight_s" in idx else None,
                weight_b=get("weight_b", float, required=False) if "weight_b" in idx else None,
            ))
    return validate_dataset(rows, limit, n_levels=n_levels)


def write_dataset(path, data, y_tau=None):
    """Write a TrialData (plus optional excluded early-infection rows) as CSV."""
    cols = list(COLUMNS)
    has_ws = data.weight_s is not None
    has_wb = data.weight_b is not None
    if has_ws:
        cols.append("weight_s")
    if has_wb:
        cols.append("weight_b")
    y_tau = data.y_tau if y_tau is None else y_tau

    def fmt(v):
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(data.n):
            row = [
                int(data.z[i]), int(data.x[i]), int(y_tau[i]), int(data.y[i]),
                int(data.delta[i]), fmt(float(data.s[i])), int(data.delta_b[i]),
                fmt(float(data.b[i])),
            ]
            if has_ws:
                row.append(fmt(float(data.weight_s[i])))
            if has_wb:
                row.append(fmt(float(data.weight_b[i])))
            writer.writerow(row)
