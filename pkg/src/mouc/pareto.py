"""Pareto-set bookkeeping and the two-dimensional hypervolume indicator."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

DUPLICATE_TOL = 1e-9
FRONT_HEADER = ("method", "parameter", "f1", "f2", "solve_ms", "status")
HV_HEADER = ("n", "method", "relaxation", "points", "hv", "ref1", "ref2")


@dataclass(frozen=True)
class FrontPoint:
    f: tuple                       # (f1 in $, f2 in t)
    x: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    method: str = ""
    parameter: float = float("nan")
    solve_ms: float = 0.0
    relaxation: str = ""
    status: str = "Optimal"

    def __post_init__(self):
        f = tuple(float(v) for v in self.f)
        if not all(math.isfinite(v) for v in f):
            raise ValueError(f"objective vector must be finite, got {f}")
        object.__setattr__(self, "f", f)


@dataclass
class ParetoFront:
    """Non-dominated points sorted by ``f1`` ascending (hence ``f2`` descending)."""
    points: list = field(default_factory=list)
    utopia: Optional[tuple] = None
    nadir: Optional[tuple] = None
    status: str = "Converged"
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sort_front(filter_nondominated(self.points))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def values(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 2))
        return np.array([p.f for p in self.points], dtype=float)


def _vec(a) -> np.ndarray:
    return np.asarray(getattr(a, "f", a), dtype=float)


def dominates(a, b) -> bool:
    """``a`` dominates ``b``: no worse in every component, better in one."""
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def filter_nondominated(points: Iterable) -> list:
    """Maximal non-dominated subset, keeping the first of any duplicates."""
    pts = list(points)
    vals = [_vec(p) for p in pts]
    keep = []
    for i, vi in enumerate(vals):
        if any(dominates(vals[j], vi) for j in range(len(pts)) if j != i):
            continue
        if any(np.array_equal(vals[k], vi) for k in keep):
            continue
        keep.append(i)
    return [pts[i] for i in keep]


def sort_front(points: Sequence) -> list:
    return sorted(points, key=lambda p: tuple(_vec(p)))


def hypervolume_2d(points: Iterable, ref) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (minimization).

    Points not weakly dominating ``ref`` are dropped with a warning.
    """
    ref = np.asarray(ref, dtype=float)
    vals = [_vec(p) for p in points]
    inside = [v for v in vals if np.all(v <= ref)]
    if len(inside) < len(vals):
        warnings.warn(f"{len(vals) - len(inside)} point(s) worse than the reference point "
                      "were excluded from the hypervolume", RuntimeWarning, stacklevel=2)
    if not inside:
        return 0.0
    front = np.array(sort_front(filter_nondominated(inside)))
    f1_next = np.append(front[1:, 0], ref[0])
    return float(np.sum((f1_next - front[:, 0]) * (ref[1] - front[:, 1])))


def reference_point(points: Iterable, factor: float = 1.2) -> np.ndarray:
    """Worst observed value per objective moved away from the front by ``factor``."""
    vals = np.array([_vec(p) for p in points], dtype=float)
    if vals.size == 0:
        raise ValueError("reference point needs at least one point")
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    worst = vals.max(axis=0)
    return np.where(worst > 0, worst * factor, worst + (factor - 1.0) * np.abs(worst))


@dataclass(frozen=True)
class Normalized:
    values: np.ndarray
    degenerate: tuple          # per component: True if nadir == utopia


def normalize(points: Iterable, utopia, nadir, rtol: float = 0.0) -> Normalized:
    """Affine map sending ``utopia`` to 0 and ``nadir`` to 1 per component.

    Components with ``nadir - utopia <= rtol * max(1, |utopia|, |nadir|)`` are
    degenerate: mapped to 0 and flagged.
    """
    u = np.asarray(utopia, dtype=float)
    n = np.asarray(nadir, dtype=float)
    vals = np.array([_vec(p) for p in points], dtype=float).reshape(-1, u.size)
    span = n - u
    degenerate = span <= rtol * np.maximum(1.0, np.maximum(np.abs(u), np.abs(n)))
    safe = np.where(degenerate, 1.0, span)
    out = (vals - u) / safe
    out[:, degenerate] = 0.0
    return Normalized(out, tuple(bool(d) for d in degenerate))


def segment_lengths(normalized) -> list[float]:
    """Euclidean distances between consecutive points of a sorted, normalized front."""
    vals = np.asarray(getattr(normalized, "values", normalized), dtype=float)
    if vals.shape[0] < 2:
        return []
    return [float(d) for d in np.linalg.norm(np.diff(vals, axis=0), axis=1)]


def remove_near_duplicates(points: Sequence, normalized_values, tol: float) -> list[int]:
    """Indices to keep, scanning in order and dropping a point closer than ``tol``
    (normalized, Euclidean) to one kept earlier."""
    vals = np.asarray(normalized_values, dtype=float)
    keep = []
    for i in range(len(points)):
        if any(np.linalg.norm(vals[i] - vals[k]) < tol for k in keep):
            continue
        keep.append(i)
    return keep


# ---------------------------------------------------------------- CSV formats

def _fmt(v: float) -> str:
    return repr(float(v))


def front_rows(front: ParetoFront) -> list[list[str]]:
    rows = [[p.method, _fmt(p.parameter), _fmt(p.f[0]), _fmt(p.f[1]), _fmt(p.solve_ms), p.status]
            for p in front.points]
    return rows


def write_front_csv(front: ParetoFront, sink, method: str = "", marker: bool = True) -> None:
    """Front CSV; a capped run appends one status row with empty objective cells."""
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(FRONT_HEADER)
    for row in front_rows(front):
        w.writerow(row)
    if marker and front.status not in ("Converged", "Completed"):
        w.writerow([method, "", "", "", "", front.status])


def front_csv_text(front: ParetoFront, method: str = "") -> str:
    buf = io.StringIO()
    write_front_csv(front, buf, method)
    return buf.getvalue()


def read_front_csv(source) -> tuple[list[FrontPoint], list[str]]:
    """Return (points, status markers) from a front CSV stream or text."""
    text = source if isinstance(source, str) else source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != FRONT_HEADER:
        raise ValueError(f"not a front CSV: header {header!r}")
    pts, markers = [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(FRONT_HEADER):
            raise ValueError(f"malformed front row {row!r}")
        method, param, f1, f2, ms, status = row
        if f1 == "" and f2 == "":
            markers.append(status)
            continue
        pts.append(FrontPoint(f=(float(f1), float(f2)), method=method,
                              parameter=float(param) if param else float("nan"),
                              solve_ms=float(ms) if ms else 0.0, status=status))
    return pts, markers


def write_hv_csv(rows: Sequence[dict], sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(HV_HEADER)
    for r in rows:
        w.writerow([r["n"], r["method"], r["relaxation"], r["points"], _fmt(r["hv"]),
                    _fmt(r["ref1"]), _fmt(r["ref2"])])


def relabel(points: Sequence[FrontPoint], **changes) -> list[FrontPoint]:
    return [replace(p, **changes) for p in points]
