"""McCormick liftings of quadratic objective caps.

A cap ``x'Qx + lin'x + c <= cap`` is rewritten through a Cholesky factor of
the regularized matrix ``Q + eps*I = L L'``: with ``y = L'x`` and
``w_j ~ y_j**2`` the cap becomes the linear row ``sum(w) + lin'x <= ...``,
and each square is replaced by tangent under-estimators and a secant
over-estimator on one or more uniform partitions of ``[y^L, y^U]``.

The regularization adds ``eps*||x||**2`` to ``sum(y**2)``.  Cap rows
subtract the secant of ``eps*x_j**2`` over each column's box, which keeps
every exactly-feasible point feasible; the correction is exact on binary
columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from mouc.model import QuadraticModel, QuadraticObjective

REG_FRACTION = 0.01
REG_FLOOR = 1e-8

INDEPENDENT = "independent"
SHARED = "shared"
AWS = "aws"
EPSILON = "epsilon"


class FactorizationError(ValueError):
    pass


@dataclass(frozen=True)
class FactoredObjective:
    L: sp.csr_matrix        # lower triangular, L L' = Q + eps I
    lin: np.ndarray
    constant: float
    epsilon_reg: float
    x_lower: np.ndarray
    x_upper: np.ndarray
    y_lower: np.ndarray
    y_upper: np.ndarray

    @property
    def n(self) -> int:
        return self.lin.shape[0]

    def image(self, x) -> np.ndarray:
        return self.L.T @ np.asarray(x, dtype=float)

    def regularization_gap(self) -> float:
        """Upper bound on ``eps*||x||^2`` over the box (logged per subproblem)."""
        bound = np.maximum(self.x_lower ** 2, self.x_upper ** 2)
        return float(self.epsilon_reg * bound.sum())


def regularization_epsilon(Q) -> float:
    data = np.abs(sp.csr_matrix(Q).data)
    data = data[data > 0]
    if data.size == 0:
        return REG_FLOOR
    return max(REG_FRACTION * float(data.mean()), REG_FLOOR)


def _interval_image(L: sp.csr_matrix, lower, upper):
    """Coordinate-wise bounds of ``L'x`` over the box ``[lower, upper]``."""
    Lt = sp.csr_matrix(L.T)
    pos = Lt.maximum(0)
    neg = Lt.minimum(0)
    y_lo = pos @ lower + neg @ upper
    y_hi = pos @ upper + neg @ lower
    return np.asarray(y_lo, dtype=float), np.asarray(y_hi, dtype=float)


def regularize_and_factor(obj: QuadraticObjective, lower, upper) -> FactoredObjective:
    """Factor ``Q + eps I`` and bound the image ``y = L'x`` over the box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    Q = sp.csr_matrix(obj.Q)
    n = obj.n
    eps = regularization_epsilon(Q)
    off_diag = Q - sp.diags(Q.diagonal())
    if off_diag.count_nonzero() == 0:
        d = Q.diagonal() + eps
        if np.any(d <= 0):
            raise FactorizationError("regularized matrix is not positive definite")
        L = sp.diags(np.sqrt(d), format="csr")
    else:
        dense = Q.toarray()
        if not np.allclose(dense, dense.T, rtol=1e-12, atol=1e-14):
            raise FactorizationError("objective matrix is not symmetric")
        try:
            L = sp.csr_matrix(np.linalg.cholesky(dense + eps * np.eye(n)))
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"Cholesky failed: {exc}") from exc
    y_lo, y_hi = _interval_image(L, lower, upper)
    return FactoredObjective(L=L, lin=np.asarray(obj.lin, dtype=float), constant=obj.constant,
                             epsilon_reg=eps, x_lower=lower, x_upper=upper,
                             y_lower=y_lo, y_upper=y_hi)


def big_m(yL: float, yU: float) -> float:
    """Deactivation constant for a coordinate whose image lies in [yL, yU]."""
    if yL > yU:
        raise ValueError(f"empty interval [{yL}, {yU}]")
    return (yU - yL) ** 2


def partition_bounds(yL: float, yU: float, N: int) -> list[tuple[float, float]]:
    if N < 1:
        raise ValueError("need at least one partition")
    if yL > yU:
        raise ValueError(f"empty interval [{yL}, {yU}]")
    edges = [yL + k * (yU - yL) / N for k in range(N)] + [yU]
    return [(edges[k], edges[k + 1]) for k in range(N)]


@dataclass(frozen=True)
class EnvelopeRows:
    """Rows ``cy*y + cw*w (+ M*q) <= rhs (+ M)`` for one partition.

    Row order: tangent at the partition's lower end, tangent at its upper
    end, secant over the partition.
    """
    partition: int
    lower: float
    upper: float
    rows: tuple          # ((cy, cw, rhs), ...)
    big_m: float = 0.0

    def bounds_on_w(self, y: float) -> tuple[float, float]:
        """Range of ``w`` admitted at ``y`` when this partition is active."""
        lo = max(-(cy * y - rhs) / cw for cy, cw, rhs in self.rows if cw < 0)
        hi = min((rhs - cy * y) / cw for cy, cw, rhs in self.rows if cw > 0)
        return lo, hi


def square_envelope(yL: float, yU: float, partitions: int = 1) -> list[EnvelopeRows]:
    """Envelope rows of ``w = y**2`` on ``partitions`` uniform pieces."""
    M = big_m(yL, yU) if partitions > 1 else 0.0
    out = []
    for k, (a, b) in enumerate(partition_bounds(yL, yU, partitions)):
        rows = (
            (2.0 * a, -1.0, a * a),        # w >= 2 a y - a^2
            (2.0 * b, -1.0, b * b),        # w >= 2 b y - b^2
            (-(a + b), 1.0, -a * b),       # w <= (a + b) y - a b
        )
        out.append(EnvelopeRows(partition=k, lower=a, upper=b, rows=rows, big_m=M))
    return out


@dataclass(frozen=True)
class LiftedLayout:
    n: int                   # base columns
    k: int                   # lifted objectives
    layers: int
    selector_blocks: int

    @property
    def total(self) -> int:
        return self.n * (1 + 2 * self.k) + self.n * self.layers * self.selector_blocks

    def y_offset(self, obj: int) -> int:
        return self.n * (1 + obj)

    def w_offset(self, obj: int) -> int:
        return self.n * (1 + self.k + obj)

    def q_offset(self, block: int) -> int:
        return self.n * (1 + 2 * self.k) + block * self.n * self.layers

    def q_index(self, block: int, partition: int, coord: int) -> int:
        return self.q_offset(block) + partition * self.n + coord


@dataclass(frozen=True)
class LiftedProblem:
    base: QuadraticModel
    A_lift: sp.csr_matrix
    b_lift: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    binary_mask: np.ndarray
    layout_lift: LiftedLayout
    mode: str
    layers: int
    selector_sharing: str
    factors: tuple
    caps: tuple
    row_tags: tuple = field(default=())
    names: tuple = field(default=())

    @property
    def n_lifted(self) -> int:
        return self.layout_lift.total

    def extend(self, obj: QuadraticObjective) -> QuadraticObjective:
        """Pad a base objective with zeros on the auxiliary columns."""
        n, N = obj.n, self.n_lifted
        Q = sp.csr_matrix(sp.block_diag([obj.Q, sp.csr_matrix((N - n, N - n))]))
        return QuadraticObjective(Q, np.concatenate([obj.lin, np.zeros(N - n)]), obj.constant)

    def selector_block(self, obj: int) -> int:
        return 0 if self.selector_sharing == SHARED else obj


def _cap_row(fac: FactoredObjective, w_off: int, n: int, cap: float, scale: float):
    """Linear cap row over (x, w) with the secant correction for eps*x^2."""
    eps = fac.epsilon_reg
    coef_x = fac.lin - eps * (fac.x_lower + fac.x_upper)
    rhs = cap - fac.constant - eps * float(fac.x_lower @ fac.x_upper)
    cols = list(range(n)) + list(range(w_off, w_off + n))
    vals = list(coef_x) + [1.0] * n
    return cols, [v / scale for v in vals], rhs / scale


def _lift(base: QuadraticModel, facs: Sequence[FactoredObjective], caps: Sequence[float],
          scales: Sequence[float], N: int, sharing: str, mode: str) -> LiftedProblem:
    if N < 1:
        raise ValueError("layers must be >= 1")
    if sharing not in (INDEPENDENT, SHARED):
        raise ValueError(f"unknown selector sharing {sharing!r}")
    n, k = base.n, len(facs)
    if N == 1:
        blocks = 0
    else:
        blocks = 1 if (sharing == SHARED or k == 1) else k
    lay = LiftedLayout(n=n, k=k, layers=N, selector_blocks=blocks)
    total = lay.total

    rows, cols, vals, rhs, tags = [], [], [], [], []

    def add_row(cs, vs, r, tag):
        idx = len(rhs)
        rows.extend([idx] * len(cs))
        cols.extend(cs)
        vals.extend(vs)
        rhs.append(r)
        tags.append(tag)

    A0 = base.constraints.A.tocoo()
    m0 = A0.shape[0]
    rows.extend(A0.row.tolist())
    cols.extend(A0.col.tolist())
    vals.extend(A0.data.tolist())
    rhs.extend(base.constraints.b.tolist())
    tags.extend(base.constraints.row_tags)
    assert len(rhs) == m0

    for o, (fac, cap, scale) in enumerate(zip(facs, caps, scales)):
        cs, vs, r = _cap_row(fac, lay.w_offset(o), n, cap, scale)
        add_row(cs, vs, r, f"cap{o + 1}")

    envelopes = []
    for o, fac in enumerate(facs):
        yo, wo = lay.y_offset(o), lay.w_offset(o)
        per_coord = [square_envelope(fac.y_lower[j], fac.y_upper[j], N) for j in range(n)]
        envelopes.append(per_coord)
        for p in range(N):
            for r_kind in range(3):
                for j in range(n):
                    env = per_coord[j][p]
                    cy, cw, r = env.rows[r_kind]
                    cs, vs = [yo + j, wo + j], [cy, cw]
                    if N > 1:
                        cs.append(lay.q_index(0 if blocks == 1 else o, p, j))
                        vs.append(env.big_m)
                        r = r + env.big_m
                    add_row(cs, vs, r, f"envelope{o + 1}")

    for o, fac in enumerate(facs):
        Lt = sp.csr_matrix(fac.L.T)
        yo = lay.y_offset(o)
        for sign in (1.0, -1.0):
            for j in range(n):
                start, end = Lt.indptr[j], Lt.indptr[j + 1]
                cs = Lt.indices[start:end].tolist() + [yo + j]
                vs = (sign * Lt.data[start:end]).tolist() + [-sign]
                add_row(cs, vs, 0.0, f"coupling{o + 1}")

    for blk in range(blocks):
        for sign in (1.0, -1.0):
            for j in range(n):
                cs = [lay.q_index(blk, p, j) for p in range(N)]
                add_row(cs, [sign] * N, sign, "selector")

    # Partition membership: sum_p q_p yL_p <= y <= sum_p q_p yU_p.  Implied by the
    # envelope rows once q is integral, but it tightens every node relaxation.
    for o, fac in enumerate(facs):
        if not blocks:
            break
        yo = lay.y_offset(o)
        blk = 0 if blocks == 1 else o
        for j in range(n):
            parts = partition_bounds(fac.y_lower[j], fac.y_upper[j], N)
            qs = [lay.q_index(blk, p, j) for p in range(N)]
            add_row([yo + j] + qs, [1.0] + [-b for _, b in parts], 0.0, f"membership{o + 1}")
            add_row([yo + j] + qs, [-1.0] + [a for a, _ in parts], 0.0, f"membership{o + 1}")

    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), total))
    lower = np.zeros(total)
    upper = np.zeros(total)
    binary = np.zeros(total, dtype=bool)
    lower[:n] = base.layout.lower
    upper[:n] = base.layout.upper
    binary[:n] = base.layout.binary_mask
    for o, fac in enumerate(facs):
        yo, wo = lay.y_offset(o), lay.w_offset(o)
        lower[yo:yo + n] = fac.y_lower
        upper[yo:yo + n] = fac.y_upper
        sq_lo = np.where((fac.y_lower <= 0) & (fac.y_upper >= 0), 0.0,
                         np.minimum(fac.y_lower ** 2, fac.y_upper ** 2))
        lower[wo:wo + n] = sq_lo
        upper[wo:wo + n] = np.maximum(fac.y_lower ** 2, fac.y_upper ** 2)
    if blocks:
        q0 = lay.q_offset(0)
        upper[q0:] = 1.0
        binary[q0:] = True

    base_names = base.layout.column_names()
    names = list(base_names)
    for o in range(k):
        names += [f"ly{o + 1}_{j}" for j in range(n)]
    for o in range(k):
        names += [f"lw{o + 1}_{j}" for j in range(n)]
    for blk in range(blocks):
        names += [f"lq{blk + 1}_{p}_{j}" for p in range(N) for j in range(n)]

    return LiftedProblem(base=base, A_lift=A, b_lift=np.array(rhs, dtype=float),
                         lower=lower, upper=upper, binary_mask=binary, layout_lift=lay,
                         mode=mode, layers=N, selector_sharing=sharing,
                         factors=tuple(facs), caps=tuple(caps), row_tags=tuple(tags),
                         names=tuple(names))


def lift_aws_caps(base: QuadraticModel, f1_fac: FactoredObjective, f2_fac: FactoredObjective,
                  cap1: float, cap2: float, N: int = 1, sharing: str = INDEPENDENT,
                  scales: tuple = (1.0, 1.0)) -> LiftedProblem:
    """Lift both objective caps of an adaptive-weighting refinement.

    ``scales`` divides each cap row (used to state caps in normalized units).
    """
    return _lift(base, (f1_fac, f2_fac), (cap1, cap2), scales, N, sharing, AWS)


def epsilon_rhs(lj: float, uj: float, epsilon: float) -> float:
    if lj > uj:
        raise ValueError(f"bounds out of order: l={lj} > u={uj}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return lj + epsilon * (uj - lj)


def lift_epsilon(base: QuadraticModel, fj_fac: FactoredObjective, lj: float, uj: float,
                 epsilon: float, N: int = 1, sharing: str = INDEPENDENT,
                 scale: float = 1.0) -> LiftedProblem:
    """Lift the single bound row of an epsilon-constraint subproblem."""
    rhs = epsilon_rhs(lj, uj, epsilon)
    return _lift(base, (fj_fac,), (rhs,), (scale,), N, sharing, EPSILON)


def lift_point(lp: LiftedProblem, x, selectors: Optional[str] = None) -> np.ndarray:
    """Canonical lift ``(x, y = L'x, w = y**2, q by partition membership)``.

    ``selectors`` defaults to the problem's own sharing mode; under
    ``shared`` the shared selector follows the first objective.
    """
    x = np.asarray(x, dtype=float)
    lay = lp.layout_lift
    n = lay.n
    out = np.zeros(lay.total)
    out[:n] = x
    for o, fac in enumerate(lp.factors):
        y = fac.image(x)
        y = np.clip(y, fac.y_lower, fac.y_upper)
        out[lay.y_offset(o):lay.y_offset(o) + n] = y
        out[lay.w_offset(o):lay.w_offset(o) + n] = y ** 2
    if lay.selector_blocks:
        for blk in range(lay.selector_blocks):
            fac = lp.factors[blk]
            y = out[lay.y_offset(blk):lay.y_offset(blk) + n]
            for j in range(n):
                p = _partition_of(y[j], fac.y_lower[j], fac.y_upper[j], lp.layers)
                out[lay.q_index(blk, p, j)] = 1.0
    return out


def _partition_of(y: float, yL: float, yU: float, N: int) -> int:
    if yU <= yL:
        return 0
    p = int(np.floor((y - yL) / (yU - yL) * N))
    return min(max(p, 0), N - 1)
