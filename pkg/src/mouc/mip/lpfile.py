"""LP text-format export for external solvers, plus a solution CSV dump."""

from __future__ import annotations

import csv
import io
from typing import IO

import numpy as np
import scipy.sparse as sp

from mouc.mip.bnb import SubProblem

DEFAULT_PRECISION = 17
_LINE_TERMS = 8


def _fmt(v: float, precision: int) -> str:
    return f"{v:.{precision}g}"


def _terms(pairs, precision):
    out = []
    for coef, label in pairs:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_fmt(abs(coef), precision)} {label}")
    return out


def _wrap(head: str, terms: list[str]) -> list[str]:
    if not terms:
        return [head + " 0"]
    lines = []
    for k in range(0, len(terms), _LINE_TERMS):
        chunk = " ".join(terms[k:k + _LINE_TERMS])
        lines.append((head + " " if k == 0 else "   ") + chunk)
    return lines


def _quad_terms(Q: sp.spmatrix, names, factor: float, precision: int) -> list[str]:
    """Upper-triangle terms of ``x'Qx`` times ``factor`` in bracket notation."""
    U = sp.triu(sp.csr_matrix(Q)).tocoo()
    order = np.lexsort((U.col, U.row))
    pairs = []
    for k in order:
        i, j, v = int(U.row[k]), int(U.col[k]), float(U.data[k])
        if i == j:
            pairs.append((factor * v, f"{names[i]} ^2"))
        else:
            pairs.append((2.0 * factor * v, f"{names[i]} * {names[j]}"))
    terms = _terms(pairs, precision)
    if terms and terms[0].startswith("+ "):
        terms[0] = terms[0][2:]
    return terms


def _linear(vec, names, precision):
    return _terms([(float(v), names[j]) for j, v in enumerate(vec)], precision)


def _row_terms(A: sp.csr_matrix, i: int, names, precision):
    s, e = A.indptr[i], A.indptr[i + 1]
    return _terms([(float(v), names[j]) for j, v in zip(A.indices[s:e], A.data[s:e])],
                  precision)


def write_lp(p: SubProblem, sink: IO[str], precision: int = DEFAULT_PRECISION,
             name: str = "subproblem") -> None:
    names = p.column_names()
    obj = p.objective
    A = sp.csr_matrix(p.A)
    A.sort_indices()
    sink.write(f"\\ {name}\n")
    sink.write("Minimize\n")
    terms = _linear(obj.lin, names, precision)
    quad = _quad_terms(obj.Q, names, 2.0, precision)
    if quad:
        terms += ["+ ["] + quad + ["]/2"]
    if obj.constant:
        terms += [f"{'-' if obj.constant < 0 else '+'} {_fmt(abs(obj.constant), precision)}"]
    for line in _wrap(" obj:", terms):
        sink.write(line + "\n")
    sink.write("Subject To\n")
    for i in range(A.shape[0]):
        lines = _wrap(f" c{i}:", _row_terms(A, i, names, precision))
        lines[-1] += f" <= {_fmt(float(p.b[i]), precision)}"
        for line in lines:
            sink.write(line + "\n")
    for k, qc in enumerate(p.quad_constraints):
        terms = _linear(qc.q, names, precision)
        quad = _quad_terms(qc.Q, names, 1.0, precision)
        if quad:
            terms += ["+ ["] + quad + ["]"]
        lines = _wrap(f" qc{k}:", terms)
        lines[-1] += f" <= {_fmt(float(qc.rhs), precision)}"
        for line in lines:
            sink.write(line + "\n")
    sink.write("Bounds\n")
    for j, nm in enumerate(names):
        lo, hi = float(p.lower[j]), float(p.upper[j])
        if p.binary[j] and lo == 0.0 and hi == 1.0:
            continue
        if np.isinf(lo) and np.isinf(hi):
            sink.write(f" {nm} free\n")
            continue
        lo_s = "-inf" if np.isinf(lo) else _fmt(lo, precision)
        hi_s = "+inf" if np.isinf(hi) else _fmt(hi, precision)
        sink.write(f" {lo_s} <= {nm} <= {hi_s}\n")
    sink.write("Binary\n")
    for j in p.binary_cols:
        sink.write(f" {names[j]}\n")
    sink.write("End\n")


def export_lp(p: SubProblem, sink, precision: int = DEFAULT_PRECISION,
              name: str = "subproblem") -> None:
    """Write ``p`` in LP format to a path or a text stream."""
    if hasattr(sink, "write"):
        write_lp(p, sink, precision, name)
        return
    from mouc._io import atomic_write_text
    buf = io.StringIO()
    write_lp(p, buf, precision, name)
    atomic_write_text(sink, buf.getvalue())


def dump_solution_csv(names, x, sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["column", "value"])
    for nm, v in zip(names, np.asarray(x, dtype=float)):
        w.writerow([nm, repr(float(v))])
