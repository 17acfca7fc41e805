"""Branch-and-bound for convex MIQPs with optional convex quadratic constraints.

Node relaxations are convex QPs (``mouc.mip.qp``).  Quadratic constraints
never enter a node relaxation: they are enforced lazily with gradient cuts,
at the root (Kelley rounds) and at every integer-feasible node.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from mouc.model import QuadraticObjective, evaluate
from mouc.mip.qp import ERROR, INFEASIBLE, QPEngine

OPTIMAL = "Optimal"
INFEASIBLE_STATUS = "Infeasible"
TIME_CAP = "TimeCapReached"
ITERATION_CAP = "IterationCap"
SOLVER_ERROR = "SolverError"


@dataclass(frozen=True)
class QuadConstraint:
    """Convex constraint ``x'Qx + q'x <= rhs``."""
    Q: sp.csr_matrix
    q: np.ndarray
    rhs: float

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ (self.Q @ x) + self.q @ x)

    def violation(self, x) -> float:
        return self.value(x) - self.rhs


@dataclass(frozen=True)
class OuterCut:
    coef: np.ndarray
    rhs: float
    source: int = 0


@dataclass(frozen=True)
class SubProblem:
    objective: QuadraticObjective
    A: sp.csr_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    binary: np.ndarray                       # boolean mask
    quad_constraints: tuple = ()
    names: tuple = ()

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def binary_cols(self) -> np.ndarray:
        return np.flatnonzero(self.binary)

    def column_names(self) -> list[str]:
        if self.names:
            return list(self.names)
        return [f"x{j}" for j in range(self.n)]


@dataclass
class BnbConfig:
    gap_tol: float = 1e-6
    int_tol: float = 1e-6
    time_cap: Optional[float] = None         # seconds
    node_cap: Optional[int] = None
    qc_tol: float = 1e-9                     # relative to max(1, |rhs|)
    max_cut_rounds: int = 500
    resort_every: int = 100
    qp_settings: Optional[dict] = None
    qp_backend: str = "clarabel"
    propagate: bool = True


@dataclass
class MipSolution:
    status: str
    x: Optional[np.ndarray]
    objective_value: float
    best_bound: float
    nodes: int = 0
    cuts: int = 0
    wall_ms: float = 0.0
    root_bound: float = -np.inf
    qp_solves: int = 0
    bound_history: list = field(default_factory=list)

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    @property
    def gap(self) -> float:
        if self.x is None:
            return np.inf
        return self.objective_value - self.best_bound


def _qc_tolerance(qc: QuadConstraint, cfg: BnbConfig) -> float:
    return cfg.qc_tol * max(1.0, abs(qc.rhs))


def add_outer_cut(p: SubProblem, qc_index: int, x_hat, tol: float = 0.0) -> Optional[OuterCut]:
    """Gradient cut of quadratic constraint ``qc_index`` at ``x_hat``.

    Returns ``None`` when ``x_hat`` already satisfies the constraint within
    ``tol``.  The cut ``(2 Q x_hat + q)' x <= rhs + x_hat' Q x_hat`` is valid
    for the whole convex region and tight at ``x_hat``.
    """
    qc = p.quad_constraints[qc_index]
    x_hat = np.asarray(x_hat, dtype=float)
    if qc.violation(x_hat) <= tol:
        return None
    Qx = qc.Q @ x_hat
    return OuterCut(coef=2.0 * Qx + qc.q, rhs=float(qc.rhs + x_hat @ Qx), source=qc_index)


class _Searcher:
    def __init__(self, p: SubProblem, cfg: BnbConfig):
        self.p = p
        self.cfg = cfg
        self.engine = QPEngine(p.objective, p.A, p.b, p.lower, p.upper, cfg.qp_settings,
                             cfg.qp_backend)
        self.propagator = BoundPropagator(p.A, p.b, p.binary) if cfg.propagate else None
        self.cuts = 0
        self.error = False

    def tighten(self, lower, upper):
        if self.propagator is None:
            return lower, upper
        return self.propagator.tighten(lower, upper)

    def separate(self, x) -> int:
        added = 0
        for k, qc in enumerate(self.p.quad_constraints):
            cut = add_outer_cut(self.p, k, x, _qc_tolerance(qc, self.cfg))
            if cut is not None:
                self.engine.add_rows(cut.coef, cut.rhs)
                if self.propagator is not None:
                    self.propagator.add_rows(cut.coef, cut.rhs)
                added += 1
        self.cuts += added
        return added

    def relax(self, lower, upper, with_cuts: bool):
        """Solve a QP; optionally run cut rounds until the quadratic rows hold."""
        sol = self.engine.solve(lower, upper)
        added_total = 0
        if with_cuts and self.p.quad_constraints:
            rounds = 0
            while sol.optimal and rounds < self.cfg.max_cut_rounds:
                added = self.separate(sol.x)
                if not added:
                    break
                added_total += added
                rounds += 1
                sol = self.engine.solve(lower, upper, warm_start=sol.x)
            if sol.optimal and rounds >= self.cfg.max_cut_rounds and self.separate(sol.x):
                sol = self.engine.solve(lower, upper, warm_start=sol.x)
                self.error = True
        if sol.status == ERROR:
            self.error = True
        return sol, added_total


class BoundPropagator:
    """Activity-based bound tightening over ``A x <= b`` (binary bounds rounded).

    Valid for any point of the box satisfying the rows; used to shrink node
    boxes before the relaxation is solved.
    """

    def __init__(self, A, b, binary, passes: int = 4, tol: float = 1e-9):
        A = sp.coo_matrix(A)
        keep = A.data != 0
        self.row, self.col, self.val = A.row[keep], A.col[keep], A.data[keep]
        self.m = A.shape[0]
        self.b = np.asarray(b, dtype=float)
        self.binary = np.asarray(binary, dtype=bool)
        self.passes = passes
        self.tol = tol
        self.pos = self.val > 0

    def add_rows(self, coefs, rhs):
        coefs = np.atleast_2d(coefs)
        C = sp.coo_matrix(coefs)
        keep = C.data != 0
        self.row = np.concatenate([self.row, C.row[keep] + self.m])
        self.col = np.concatenate([self.col, C.col[keep]])
        self.val = np.concatenate([self.val, C.data[keep]])
        self.pos = self.val > 0
        self.b = np.concatenate([self.b, np.atleast_1d(rhs)])
        self.m += coefs.shape[0]

    def tighten(self, lower, upper):
        """Return tightened (lower, upper), or None when the box is proven empty."""
        lo, hi = lower.copy(), upper.copy()
        if not self.m:
            return lo, hi
        r, c, a, pos = self.row, self.col, self.val, self.pos
        for _ in range(self.passes):
            contrib = np.where(pos, a * lo[c], a * hi[c])
            minact = np.bincount(r, weights=contrib, minlength=self.m)
            slack = self.b[r] - (minact[r] - contrib)
            bound = slack / a
            scale = self.tol * np.maximum(1.0, np.abs(bound))
            new_hi = hi.copy()
            new_lo = lo.copy()
            np.minimum.at(new_hi, c[pos], bound[pos] + scale[pos])
            np.maximum.at(new_lo, c[~pos], bound[~pos] - scale[~pos])
            bins = self.binary
            new_hi[bins] = np.floor(new_hi[bins] + 1e-6)
            new_lo[bins] = np.ceil(new_lo[bins] - 1e-6)
            if np.any(new_lo > new_hi + 1e-7 * np.maximum(1.0, np.abs(new_hi))):
                return None
            new_lo = np.minimum(new_lo, new_hi)
            change = max(float(np.max(hi - new_hi, initial=0.0)),
                         float(np.max(new_lo - lo, initial=0.0)))
            lo, hi = new_lo, new_hi
            if change <= 1e-7:
                break
        return lo, hi


def _most_fractional(x, cols, int_tol):
    frac = np.abs(x[cols] - np.round(x[cols]))
    if frac.size == 0 or frac.max() <= int_tol:
        return None
    # argmax returns the first maximum, i.e. the lowest column index on ties
    return int(cols[int(np.argmax(frac))])


def branch_and_bound(p: SubProblem, cfg: Optional[BnbConfig] = None) -> MipSolution:
    """Solve ``min f(x)`` over the linear system, bounds, binaries and quad constraints.

    Depth-first search with most-fractional branching (lowest index on ties),
    the nearer rounding explored first, and a best-bound re-sort of the open
    list every ``cfg.resort_every`` nodes.  Time and node caps are checked
    between nodes only.
    """
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    search = _Searcher(p, cfg)
    bins = p.binary_cols
    lower0 = np.array(p.lower, dtype=float)
    upper0 = np.array(p.upper, dtype=float)
    lower0[bins] = np.ceil(lower0[bins] - cfg.int_tol)
    upper0[bins] = np.floor(upper0[bins] + cfg.int_tol)

    def elapsed():
        return time.perf_counter() - t0

    def finish(status, x, ub, bound, nodes, history, root):
        value = ub if x is not None else np.inf
        return MipSolution(status=status, x=x, objective_value=value, best_bound=bound,
                           nodes=nodes, cuts=search.cuts, wall_ms=elapsed() * 1e3,
                           root_bound=root, qp_solves=search.engine.solves,
                           bound_history=history)

    if cfg.time_cap is not None and cfg.time_cap <= 0:
        return finish(TIME_CAP, None, np.inf, -np.inf, 0, [], -np.inf)

    box = search.tighten(lower0, upper0)
    if box is None:
        return finish(INFEASIBLE_STATUS, None, np.inf, np.inf, 1, [np.inf], np.inf)
    lower0, upper0 = box
    root, _ = search.relax(lower0, upper0, with_cuts=True)
    if root.status == INFEASIBLE:
        return finish(INFEASIBLE_STATUS, None, np.inf, np.inf, 1, [np.inf], np.inf)
    if not root.optimal:
        return finish(SOLVER_ERROR, None, np.inf, -np.inf, 1, [], -np.inf)
    root_bound = root.value

    # open nodes: (bound, seq, lower, upper, warm)
    stack = [(root_bound, 0, lower0, upper0, root.x)]
    seq = 1
    nodes = 0
    ub = np.inf
    x_best = None
    history = []
    last_bound = -np.inf

    def global_bound():
        open_min = min((nd[0] for nd in stack), default=np.inf)
        return min(open_min, ub)

    def prunable(bound):
        return bound >= ub - cfg.gap_tol * max(1.0, abs(ub))

    while stack:
        if cfg.time_cap is not None and elapsed() >= cfg.time_cap:
            return finish(TIME_CAP, x_best, ub, max(global_bound(), last_bound), nodes,
                          history, root_bound)
        if cfg.node_cap is not None and nodes >= cfg.node_cap:
            return finish(ITERATION_CAP, x_best, ub, max(global_bound(), last_bound), nodes,
                          history, root_bound)
        if nodes and nodes % cfg.resort_every == 0:
            # best bound ends up on top of the stack; seq keeps the order total
            stack.sort(key=lambda nd: (-nd[0], -nd[1]))
        bound, _, lo, hi, warm = stack.pop()
        nodes += 1
        if prunable(bound):
            last_bound = max(last_bound, global_bound() if stack else min(ub, bound))
            history.append(last_bound)
            continue
        box = search.tighten(lo, hi)
        if box is None:
            last_bound = max(last_bound, global_bound())
            history.append(last_bound)
            continue
        lo, hi = box
        sol = search.engine.solve(lo, hi, warm_start=warm)
        if sol.status == ERROR:
            search.error = True
        if sol.optimal:
            node_bound = max(bound, sol.value)
            j = _most_fractional(sol.x, bins, cfg.int_tol)
            if j is None:
                fixed_lo, fixed_hi = lo.copy(), hi.copy()
                fixed_lo[bins] = fixed_hi[bins] = np.round(sol.x[bins])
                fsol, added = search.relax(fixed_lo, fixed_hi, with_cuts=True)
                if fsol.optimal and fsol.value < ub:
                    ub = fsol.value
                    x_best = fsol.x.copy()
                if added:
                    # cuts changed the relaxation of this subtree; revisit it
                    stack.append((node_bound, seq, lo, hi, sol.x))
                    seq += 1
            elif not prunable(node_bound):
                down_lo, down_hi = lo.copy(), hi.copy()
                down_hi[j] = 0.0
                up_lo, up_hi = lo.copy(), hi.copy()
                up_lo[j] = 1.0
                children = [(down_lo, down_hi), (up_lo, up_hi)]
                if sol.x[j] >= 0.5:
                    children.reverse()
                # push the farther child first so the nearer one is popped next
                for c_lo, c_hi in reversed(children):
                    stack.append((node_bound, seq, c_lo, c_hi, sol.x))
                    seq += 1
        last_bound = max(last_bound, global_bound())
        history.append(last_bound)

    if search.error and x_best is None:
        return finish(SOLVER_ERROR, None, np.inf, last_bound, nodes, history, root_bound)
    if x_best is None:
        return finish(INFEASIBLE_STATUS, None, np.inf, np.inf, nodes, history, root_bound)
    status = SOLVER_ERROR if search.error else OPTIMAL
    return finish(status, x_best, ub, ub, nodes, history, root_bound)


def objective_of(p: SubProblem, x) -> float:
    return evaluate(p.objective, x)


def max_violation(p: SubProblem, x) -> float:
    """Largest violation of rows, bounds and quadratic constraints at ``x``."""
    x = np.asarray(x, dtype=float)
    parts = [0.0]
    if p.A.shape[0]:
        parts.append(float(np.max(p.A @ x - p.b)))
    parts.append(float(np.max(p.lower - x, initial=0.0)))
    parts.append(float(np.max(x - p.upper, initial=0.0)))
    for qc in p.quad_constraints:
        parts.append(qc.violation(x))
    return max(parts)


def fixed_binaries(p: SubProblem, values: Sequence[float]) -> SubProblem:
    """Copy of ``p`` with every binary column fixed to ``values`` (in column order)."""
    lo = np.array(p.lower, dtype=float)
    hi = np.array(p.upper, dtype=float)
    cols = p.binary_cols
    lo[cols] = hi[cols] = np.asarray(values, dtype=float)
    return SubProblem(p.objective, p.A, p.b, lo, hi, p.binary, p.quad_constraints, p.names)
