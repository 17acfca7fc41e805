"""Convex QP node relaxations.

Two backends share one interface: an interior-point method (Clarabel, the
default) and an operator-splitting method (OSQP).  The splitting method
stalls on the LP-like binary columns of the commitment model, so the
interior-point backend carries the accuracy-critical work.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import clarabel
import scipy.sparse as sp
from scipy.optimize import linprog

from mouc.model import QuadraticObjective, evaluate

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ERROR = "error"

DEFAULT_SETTINGS = dict(
    verbose=False,
    eps_abs=1e-9,
    eps_rel=1e-9,
    eps_prim_inf=1e-7,
    eps_dual_inf=1e-7,
    max_iter=20000,
    polishing=True,
    polish_refine_iter=20,
    adaptive_rho=True,
    warm_starting=True,
)

CLARABEL_SETTINGS = dict(
    verbose=False,
    tol_gap_abs=1e-9,
    tol_gap_rel=1e-9,
    tol_feas=1e-9,
    max_iter=200,
)

_INFEASIBLE_CODES = {"primal infeasible", "primal infeasible inaccurate"}
_SOLVED_CODES = {"solved", "solved inaccurate"}


class QPSolverError(RuntimeError):
    pass


@dataclass
class ContinuousSolution:
    status: str
    x: Optional[np.ndarray]
    value: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _split_equalities(A: sp.csr_matrix, b: np.ndarray):
    """Merge row pairs ``a x <= r`` / ``-a x <= -r`` into equality rows."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    seen = {}
    paired = np.full(A.shape[0], -1)
    for i in range(A.shape[0]):
        s, e = A.indptr[i], A.indptr[i + 1]
        idx = A.indices[s:e].tobytes()
        key = (idx, A.data[s:e].tobytes(), float(b[i]))
        neg = (idx, (-A.data[s:e]).tobytes(), float(-b[i]))
        j = seen.get(neg)
        if j is not None and paired[j] < 0 and e > s:
            paired[i] = j
            paired[j] = i
            del seen[neg]
        else:
            seen.setdefault(key, i)
    keep_ineq = paired < 0
    eq_rows = np.array([i for i in range(A.shape[0]) if paired[i] >= 0 and paired[i] > i], dtype=int)
    return A[keep_ineq], b[keep_ineq], A[eq_rows], b[eq_rows]


class _OsqpBackend:
    """ADMM backend; bounds are identity rows so branching only updates limits."""

    def __init__(self, P, q, A_ineq, b_ineq, A_eq, b_eq, n, settings):
        self.settings = dict(DEFAULT_SETTINGS, **(settings or {}))
        A = sp.vstack([A_ineq, A_eq, sp.identity(n, format="csr")], format="csc")
        m_ineq = A_ineq.shape[0]
        self._l_fixed = np.concatenate([np.full(m_ineq, -np.inf), b_eq])
        self._u_fixed = np.concatenate([b_ineq, b_eq])
        self.n = n
        import osqp  # optional backend
        self._solver = osqp.OSQP()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self._solver.setup(P, q, A, np.concatenate([self._l_fixed, np.full(n, -np.inf)]),
                               np.concatenate([self._u_fixed, np.full(n, np.inf)]),
                               **self.settings)

    def solve(self, lower, upper, warm_start):
        s = self._solver
        s.update(l=np.concatenate([self._l_fixed, lower]),
                 u=np.concatenate([self._u_fixed, upper]))
        if warm_start is not None:
            s.warm_start(x=np.asarray(warm_start, dtype=float))
        res = s.solve(raise_error=False)
        status = res.info.status
        if status not in _SOLVED_CODES | _INFEASIBLE_CODES:
            # one retry from a cold start with a longer iteration budget
            s.update_settings(max_iter=self.settings["max_iter"] * 5)
            s.warm_start(x=np.clip(np.zeros(self.n), lower, upper))
            res = s.solve(raise_error=False)
            s.update_settings(max_iter=self.settings["max_iter"])
            status = res.info.status
        if status in _INFEASIBLE_CODES:
            return INFEASIBLE, None, res.info.iter
        if status not in _SOLVED_CODES or res.x is None or not np.all(np.isfinite(res.x)):
            return ERROR, None, res.info.iter
        return OPTIMAL, res.x, res.info.iter


class _ClarabelBackend:
    """Interior-point backend; rebuilt per solve (setup is cheap at this scale).

    Columns fixed by their bounds are substituted out before the solve, so
    deep nodes (most binaries fixed) give small, well-conditioned QPs.  The
    reduced matrices are assembled from precomputed triplets.
    """

    def __init__(self, P, q, A_ineq, b_ineq, A_eq, b_eq, n, settings):
        self.q = np.asarray(q, dtype=float)
        self.A_ineq, self.b_ineq = sp.csr_matrix(A_ineq), np.asarray(b_ineq, dtype=float)
        self.A_eq, self.b_eq = sp.csr_matrix(A_eq), np.asarray(b_eq, dtype=float)
        self.n = n
        self.settings = dict(CLARABEL_SETTINGS, **(settings or {}))
        # stacked rows: equalities first, then inequalities
        M = sp.vstack([self.A_eq, self.A_ineq], format="coo")
        self.m_eq = self.A_eq.shape[0]
        self.m = M.shape[0]
        self.r, self.c, self.v = M.row, M.col, M.data
        self.b = np.concatenate([self.b_eq, self.b_ineq])
        Pc = sp.triu(sp.coo_matrix(P), format="coo")
        self.pr, self.pc, self.pv = Pc.row, Pc.col, Pc.data

    def _reduced(self, lower, upper):
        n = self.n
        fixed = upper - lower <= 1e-12 * np.maximum(1.0, np.abs(upper))
        x = np.where(fixed, 0.5 * (lower + upper), 0.0)
        col_map = np.cumsum(~fixed) - 1
        k = int((~fixed).sum())
        # constraint rows
        keep = ~fixed[self.c]
        shift = np.bincount(self.r[~keep], weights=self.v[~keep] * x[self.c[~keep]],
                            minlength=self.m)
        rhs = self.b - shift
        live = np.bincount(self.r[keep], minlength=self.m) > 0
        dead = ~live
        tol = 1e-9 * np.maximum(1.0, np.abs(self.b))
        dead_eq = dead[:self.m_eq]
        dead_in = dead[self.m_eq:]
        if np.any(np.abs(rhs[:self.m_eq][dead_eq]) > tol[:self.m_eq][dead_eq]) or \
                np.any(rhs[self.m_eq:][dead_in] < -tol[self.m_eq:][dead_in]):
            return None
        row_map = np.cumsum(live) - 1
        n_eq = int(live[:self.m_eq].sum())
        n_live = int(live.sum())
        rows = [row_map[self.r[keep]]]
        cols = [col_map[self.c[keep]]]
        vals = [self.v[keep]]
        free = np.flatnonzero(~fixed)
        lo, hi = lower[free], upper[free]
        up = np.flatnonzero(np.isfinite(hi))
        dn = np.flatnonzero(np.isfinite(lo))
        rows += [n_live + np.arange(up.size), n_live + up.size + np.arange(dn.size)]
        cols += [up, dn]
        vals += [np.ones(up.size), -np.ones(dn.size)]
        m_tot = n_live + up.size + dn.size
        A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m_tot, k))
        b = np.concatenate([rhs[live], hi[up], -lo[dn]])
        # objective: keep the free block, fold the coupling into q
        both = ~fixed[self.pr] & ~fixed[self.pc]
        P = sp.csc_matrix((self.pv[both], (col_map[self.pr[both]], col_map[self.pc[both]])),
                          shape=(k, k))
        q = self.q[free].copy()
        a = ~fixed[self.pr] & fixed[self.pc]
        q += np.bincount(col_map[self.pr[a]], weights=self.pv[a] * x[self.pc[a]], minlength=k)
        a = fixed[self.pr] & ~fixed[self.pc]
        q += np.bincount(col_map[self.pc[a]], weights=self.pv[a] * x[self.pr[a]], minlength=k)
        cones = []
        if n_eq:
            cones.append(clarabel.ZeroConeT(n_eq))
        if m_tot - n_eq:
            cones.append(clarabel.NonnegativeConeT(m_tot - n_eq))
        if m_tot == 0:
            A = sp.csc_matrix((1, k))
            b = np.zeros(1)
            cones = [clarabel.NonnegativeConeT(1)]
        return P, q, A, b, cones, x, free

    def solve(self, lower, upper, warm_start):
        red = self._reduced(lower, upper)
        if red is None:
            return INFEASIBLE, None, 0
        P, q, A, b, cones, x, free = red
        if free.size == 0:
            return OPTIMAL, x, 0
        st = clarabel.DefaultSettings()
        for key, val in self.settings.items():
            setattr(st, key, val)
        sol = clarabel.DefaultSolver(P, q, A, b, cones, st).solve()
        status = str(sol.status)
        iters = sol.iterations
        if status not in _CLARABEL_SOLVED:
            # Stalls are mostly infeasible boxes the IPM fails to certify, and an
            # infeasibility claim can be spurious; either way HiGHS decides.
            if not _lp_feasible(self.A_ineq, self.b_ineq, self.A_eq, self.b_eq, lower, upper):
                return INFEASIBLE, None, iters
            for retry in _CLARABEL_RETRIES:
                for key, val in retry.items():
                    setattr(st, key, val)
                sol = clarabel.DefaultSolver(P, q, A, b, cones, st).solve()
                status = str(sol.status)
                iters += sol.iterations
                if status in _CLARABEL_SOLVED:
                    break
        xr = np.asarray(sol.x, dtype=float)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return INFEASIBLE, None, iters
        if status not in _CLARABEL_SOLVED or not np.all(np.isfinite(xr)):
            return ERROR, None, iters
        x[free] = xr
        return OPTIMAL, x, iters


_CLARABEL_SOLVED = {"Solved", "AlmostSolved"}
# escalation for nodes HiGHS calls feasible; near-degenerate boxes need the looser gap
_CLARABEL_RETRIES = (
    dict(presolve_enable=False, max_iter=2000),
    dict(tol_feas=1e-8, tol_gap_abs=1e-8, tol_gap_rel=1e-8),
)


def _lp_feasible(A_ineq, b_ineq, A_eq, b_eq, lower, upper) -> bool:
    """Phase-one check with HiGHS; True unless infeasibility is certified."""
    n = len(lower)
    bounds = np.column_stack([np.where(np.isfinite(lower), lower, -np.inf),
                              np.where(np.isfinite(upper), upper, np.inf)])
    res = linprog(np.zeros(n),
                  A_ub=A_ineq if A_ineq.shape[0] else None, b_ub=b_ineq if A_ineq.shape[0] else None,
                  A_eq=A_eq if A_eq.shape[0] else None, b_eq=b_eq if A_eq.shape[0] else None,
                  bounds=bounds, method="highs")
    return res.status != 2


BACKENDS = {"clarabel": _ClarabelBackend, "osqp": _OsqpBackend}
DEFAULT_BACKEND = "clarabel"


class QPEngine:
    """Reusable relaxation solver for ``min x'Qx + lin'x + c`` s.t. ``A x <= b``, bounds.

    Negated row pairs are merged into equalities.  Appending cuts rebuilds
    the backend; bound changes do not.
    """

    def __init__(self, objective: QuadraticObjective, A, b, lower, upper, settings=None,
                 backend: str = DEFAULT_BACKEND):
        if backend not in BACKENDS:
            raise ValueError(f"unknown QP backend {backend!r}")
        self.objective = objective
        self.n = objective.n
        self.backend = backend
        self.settings = settings
        A = sp.csr_matrix(A, shape=(A.shape[0], self.n)) if A is not None else sp.csr_matrix((0, self.n))
        b = np.asarray(b, dtype=float) if b is not None else np.zeros(0)
        self._A_ineq, self._b_ineq, self._A_eq, self._b_eq = _split_equalities(A, b)
        self._cut_A = []
        self._cut_b = []
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self._P = sp.triu(sp.csc_matrix(objective.Q) * 2.0, format="csc")
        self._q = np.asarray(objective.lin, dtype=float)
        self.solves = 0
        self._impl = None

    @property
    def n_cuts(self) -> int:
        return len(self._cut_b)

    def add_rows(self, coefs, rhs) -> None:
        coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
        self._cut_A.append(sp.csr_matrix(coefs))
        self._cut_b.extend(np.atleast_1d(rhs).tolist())
        self._impl = None

    def _build(self):
        A_ineq = sp.vstack([self._A_ineq] + self._cut_A, format="csr")
        b_ineq = np.concatenate([self._b_ineq, np.asarray(self._cut_b, dtype=float)])
        self._impl = BACKENDS[self.backend](self._P, self._q, A_ineq, b_ineq,
                                            self._A_eq, self._b_eq, self.n, self.settings)

    def solve(self, lower=None, upper=None, warm_start=None) -> ContinuousSolution:
        lower = self.lower if lower is None else np.asarray(lower, dtype=float)
        upper = self.upper if upper is None else np.asarray(upper, dtype=float)
        if np.any(lower > upper + 1e-12):
            return ContinuousSolution(INFEASIBLE, None, np.inf)
        if self._impl is None:
            self._build()
        status, x, iters = self._impl.solve(lower, upper, warm_start)
        self.solves += 1
        if status == INFEASIBLE:
            return ContinuousSolution(INFEASIBLE, None, np.inf, iters)
        if status == ERROR:
            return ContinuousSolution(ERROR, None, np.nan, iters)
        x = np.clip(x, lower, upper)
        return ContinuousSolution(OPTIMAL, x, evaluate(self.objective, x), iters)

    def max_row_violation(self, x) -> float:
        parts = [self._A_ineq @ x - self._b_ineq]
        if self._cut_b:
            parts.append(sp.vstack(self._cut_A) @ x - np.asarray(self._cut_b))
        if self._A_eq.shape[0]:
            parts.append(np.abs(self._A_eq @ x - self._b_eq))
        v = np.concatenate(parts)
        return float(v.max()) if v.size else 0.0


def solve_qp(objective: QuadraticObjective, A, b, bounds, warm_start=None,
             settings=None, backend: str = DEFAULT_BACKEND) -> ContinuousSolution:
    """Solve one convex QP ``min x'Qx + lin'x + c`` s.t. ``A x <= b``, ``lo <= x <= hi``.

    ``bounds`` is a ``(lower, upper)`` pair of arrays.  Raises
    :class:`QPSolverError` when the solver cannot certify either an optimum
    or infeasibility.
    """
    lower, upper = bounds
    engine = QPEngine(objective, A, b, lower, upper, settings, backend)
    sol = engine.solve(warm_start=warm_start)
    if sol.status == ERROR:
        raise QPSolverError("QP solver failed to converge")
    return sol
