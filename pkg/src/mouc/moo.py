"""Frontier strategies: uniform weights, adaptive weighted sum, epsilon constraints.

Every scalarized subproblem is posed on normalized objectives
``f* = (f - utopia) / (nadir - utopia)`` and solved by branch-and-bound.
Caps on objectives are either exact quadratic constraints, enforced with
outer-approximation cuts (``QUADCON``), or McCormick liftings (``MC``).
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from mouc import relax
from mouc.mip import (BnbConfig, INFEASIBLE_STATUS, MipSolution, OPTIMAL, QuadConstraint,
                      SubProblem, TIME_CAP, branch_and_bound)
from mouc.model import QuadraticModel, QuadraticObjective
from mouc.pareto import (FrontPoint, ParetoFront, filter_nondominated, normalize,
                         remove_near_duplicates, segment_lengths, sort_front)

QUADCON = "quadcon"
MC = "mc"
MODES = (QUADCON, MC)

CONVERGED = "Converged"
COMPLETED = "Completed"
MAX_ROUNDS = "MaxRounds"
TIME_CAP_REACHED = TIME_CAP

# relative slack on the first-stage optimum in the lexicographic anchor solve
ANCHOR_SLACK = 1e-7
DEGENERATE_RTOL = 1e-6           # span below this (relative) counts as zero width


class InfeasibleModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class AwsParams:
    n_initial: int = 10
    delta_J: float = 0.1
    overlap_eps: Optional[float] = None      # defaults to delta_J / 10
    C: float = 1.5
    max_rounds: int = 20

    def __post_init__(self):
        if self.overlap_eps is None:
            object.__setattr__(self, "overlap_eps", self.delta_J / 10.0)
        if not 0 < self.overlap_eps < self.delta_J:
            raise ValueError("need 0 < overlap_eps < delta_J")
        if self.n_initial < 1:
            raise ValueError("n_initial must be >= 1")


@dataclass
class SweepConfig:
    mode: str = QUADCON
    layers: int = 1
    sharing: str = relax.INDEPENDENT
    time_cap_ms: Optional[float] = None
    step: float = 0.1
    bounds: Optional[tuple] = None           # (l1, u1, l2, u2)
    bnb: BnbConfig = field(default_factory=BnbConfig)
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0 < self.step <= 1:
            raise ValueError(f"step must lie in (0, 1], got {self.step}")
        if self.bounds is not None:
            if len(self.bounds) != 4 or not all(math.isfinite(float(v)) for v in self.bounds):
                raise ValueError("bounds must be four finite numbers (l1, u1, l2, u2)")

    @property
    def relaxation(self) -> str:
        return QUADCON if self.mode == QUADCON else f"mc{self.layers}"


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get("MOUC_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


# ---------------------------------------------------------------- budget

class _Budget:
    def __init__(self, cap_ms: Optional[float]):
        self.t0 = time.perf_counter()
        self.deadline = None if cap_ms is None else self.t0 + cap_ms / 1e3

    def remaining(self) -> Optional[float]:
        if self.deadline is None:
            return None
        return self.deadline - time.perf_counter()

    def expired(self) -> bool:
        rem = self.remaining()
        return rem is not None and rem <= 0

    def bnb(self, cfg: BnbConfig) -> BnbConfig:
        rem = self.remaining()
        return cfg if rem is None else replace(cfg, time_cap=max(rem, 0.0))


# ---------------------------------------------------------------- anchors

@dataclass(frozen=True)
class Anchors:
    utopia: tuple
    nadir: tuple                 # payoff-table estimate
    points: tuple = ()           # anchor FrontPoints (f1-optimal, f2-optimal)
    degenerate: tuple = (False, False)
    nadir_is_estimate: bool = True

    @property
    def scales(self) -> np.ndarray:
        span = np.asarray(self.nadir, float) - np.asarray(self.utopia, float)
        return np.where(self.degenerate, 1.0, span)


def degenerate_span(utopia, nadir) -> tuple:
    """Flag components whose utopia-nadir span is within solver noise."""
    return tuple(bool(n - u <= DEGENERATE_RTOL * max(1.0, abs(u), abs(n)))
                 for u, n in zip(utopia, nadir))


def normalized_objective(obj: QuadraticObjective, utopia: float, scale: float) -> QuadraticObjective:
    return obj.scaled(1.0 / scale, -utopia / scale)


def scalarized(model: QuadraticModel, lam: float, anchors: Anchors) -> QuadraticObjective:
    """``lam * f1* + (1 - lam) * f2*`` on normalized objectives."""
    s = anchors.scales
    u = anchors.utopia
    f1 = normalized_objective(model.f1, u[0], s[0])
    f2 = normalized_objective(model.f2, u[1], s[1])
    return f1.scaled(lam) + f2.scaled(1.0 - lam)


def _base_subproblem(model: QuadraticModel, objective: QuadraticObjective,
                     quad: Sequence[QuadConstraint] = ()) -> SubProblem:
    lay = model.layout
    return SubProblem(objective=objective, A=model.constraints.A, b=model.constraints.b,
                      lower=lay.lower, upper=lay.upper, binary=lay.binary_mask,
                      quad_constraints=tuple(quad), names=tuple(lay.column_names()))


def _lifted_subproblem(lp: relax.LiftedProblem, objective: QuadraticObjective) -> SubProblem:
    return SubProblem(objective=lp.extend(objective), A=lp.A_lift, b=lp.b_lift,
                      lower=lp.lower, upper=lp.upper, binary=lp.binary_mask,
                      names=lp.names)


def objective_cap(obj: QuadraticObjective, cap: float, scale: float = 1.0) -> QuadConstraint:
    """``obj(x) <= cap`` as a quadratic constraint, divided through by ``scale``."""
    return QuadConstraint(Q=sp.csr_matrix(obj.Q) / scale, q=obj.lin / scale,
                          rhs=(cap - obj.constant) / scale)


class Factors:
    """Lazily computed factorizations of both objectives over the base box."""

    def __init__(self, model: QuadraticModel):
        self.model = model
        self._f = {}

    def __getitem__(self, k: int) -> relax.FactoredObjective:
        if k not in self._f:
            obj = self.model.f1 if k == 0 else self.model.f2
            lay = self.model.layout
            self._f[k] = relax.regularize_and_factor(obj, lay.lower, lay.upper)
        return self._f[k]


def weighted_subproblem(model: QuadraticModel, lam: float, anchors: Anchors,
                        caps: Optional[tuple] = None, cfg: Optional[SweepConfig] = None,
                        factors: Optional[Factors] = None) -> SubProblem:
    """Weighted-sum subproblem; ``caps`` are normalized upper bounds on (f1*, f2*)."""
    cfg = cfg or SweepConfig()
    obj = scalarized(model, lam, anchors)
    if caps is None:
        return _base_subproblem(model, obj)
    s, u = anchors.scales, anchors.utopia
    raw = [u[k] + s[k] * caps[k] for k in range(2)]
    if cfg.mode == QUADCON:
        quad = [objective_cap(model.f1, raw[0], s[0]), objective_cap(model.f2, raw[1], s[1])]
        return _base_subproblem(model, obj, quad)
    factors = factors or Factors(model)
    lp = relax.lift_aws_caps(model, factors[0], factors[1], raw[0], raw[1], N=cfg.layers,
                             sharing=cfg.sharing, scales=(s[0], s[1]))
    return _lifted_subproblem(lp, obj)


def epsilon_subproblem(model: QuadraticModel, constrained: int, eps: float, l: float, u: float,
                       anchors: Anchors, cfg: Optional[SweepConfig] = None,
                       factors: Optional[Factors] = None) -> SubProblem:
    """Minimize the free normalized objective s.t. ``f_j <= l + eps (u - l)``.

    ``constrained`` is 1 or 2 (the bounded objective).
    """
    cfg = cfg or SweepConfig()
    if constrained not in (1, 2):
        raise ValueError("constrained objective must be 1 or 2")
    j = constrained - 1
    free = 1 - j
    s, ut = anchors.scales, anchors.utopia
    objs = model.objectives()
    obj = normalized_objective(objs[free], ut[free], s[free])
    rhs = relax.epsilon_rhs(l, u, eps)
    if cfg.mode == QUADCON:
        return _base_subproblem(model, obj, [objective_cap(objs[j], rhs, s[j])])
    factors = factors or Factors(model)
    lp = relax.lift_epsilon(model, factors[j], l, u, eps, N=cfg.layers, sharing=cfg.sharing,
                            scale=s[j])
    return _lifted_subproblem(lp, obj)


def _solve(p: SubProblem, bnb_cfg: BnbConfig) -> MipSolution:
    return branch_and_bound(p, bnb_cfg)


def _single_objective_anchor(model, k, cfg, budget, log):
    """Lexicographic optimum: minimize f_k, then the other objective at f_k's optimum."""
    objs = model.objectives()
    first = _solve(_base_subproblem(model, objs[k]), budget.bnb(cfg.bnb))
    log.append(dict(stage=f"anchor{k + 1}a", status=first.status, wall_ms=first.wall_ms,
                    nodes=first.nodes))
    if first.status == INFEASIBLE_STATUS:
        raise InfeasibleModelError("model is infeasible")
    if first.status != OPTIMAL:
        return first, None
    best = first.objective_value
    cap = best + ANCHOR_SLACK * max(1.0, abs(best))
    scale = max(1.0, abs(best))
    other = objs[1 - k]
    second = _solve(_base_subproblem(model, other, [objective_cap(objs[k], cap, scale)]),
                    budget.bnb(cfg.bnb))
    log.append(dict(stage=f"anchor{k + 1}b", status=second.status, wall_ms=second.wall_ms,
                    nodes=second.nodes))
    if second.status != OPTIMAL:
        return first, first
    return first, second


def utopia_nadir(model: QuadraticModel, cfg: Optional[SweepConfig] = None,
                 _budget: Optional[_Budget] = None, log: Optional[list] = None) -> Anchors:
    """Utopia from the two single-objective optima, nadir from the payoff table.

    Each anchor is made lexicographic (the other objective is minimized at
    the first objective's optimum) so the payoff table is well defined.
    Returns ``None`` if the time budget ran out first.
    """
    cfg = cfg or SweepConfig()
    budget = _budget or _Budget(cfg.time_cap_ms)
    log = log if log is not None else []
    pts = []
    for k in range(2):
        t = time.perf_counter()
        first, sol = _single_objective_anchor(model, k, cfg, budget, log)
        if sol is None:
            return None
        f = model.objective_values(sol.x[:model.n])
        pts.append(FrontPoint(f=f, x=sol.x[:model.n], method="anchor", parameter=1.0 - k,
                              solve_ms=(time.perf_counter() - t) * 1e3,
                              relaxation=QUADCON, status=sol.status))
    utopia = (pts[0].f[0], pts[1].f[1])
    nadir = (max(p.f[0] for p in pts), max(p.f[1] for p in pts))
    return Anchors(utopia=utopia, nadir=nadir, points=tuple(pts),
                   degenerate=degenerate_span(utopia, nadir))


def anchors_from_bounds(bounds) -> Anchors:
    l1, u1, l2, u2 = (float(v) for v in bounds)
    return Anchors(utopia=(l1, l2), nadir=(u1, u2),
                   degenerate=degenerate_span((l1, l2), (u1, u2)), nadir_is_estimate=False)


# ---------------------------------------------------------------- sweeps

@dataclass
class _Task:
    method: str
    parameter: float
    build: Callable[[], SubProblem]


def _run_tasks(model, tasks: Sequence[_Task], cfg: SweepConfig, budget: _Budget,
               log: list) -> tuple[list, bool, list]:
    """Solve tasks in order; returns (points, capped, per-task outcome)."""

    def one(task):
        if budget.expired():
            return task, None, 0.0
        t = time.perf_counter()
        sol = _solve(task.build(), budget.bnb(cfg.bnb))
        return task, sol, (time.perf_counter() - t) * 1e3

    if cfg.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = []
        for task in tasks:
            results.append(one(task))
            if results[-1][1] is None or results[-1][1].status == TIME_CAP:
                break
    points, outcomes, capped = [], [], False
    for task, sol, ms in results:
        if sol is None or sol.status == TIME_CAP:
            capped = True
            outcomes.append(None)
            log.append(dict(method=task.method, parameter=task.parameter, status=TIME_CAP,
                            wall_ms=ms, nodes=0 if sol is None else sol.nodes))
            continue
        log.append(dict(method=task.method, parameter=task.parameter, status=sol.status,
                        wall_ms=ms, nodes=sol.nodes, cuts=sol.cuts))
        if sol.status != OPTIMAL:
            outcomes.append(sol)
            continue
        x = sol.x[:model.n]
        pt = FrontPoint(f=model.objective_values(x), x=x, method=task.method,
                        parameter=task.parameter, solve_ms=ms, relaxation=cfg.relaxation,
                        status=sol.status)
        points.append(pt)
        outcomes.append(pt)
    if len(results) < len(tasks):
        capped = True
    return points, capped, outcomes


def uniform_weights(n_pairs: int) -> list[float]:
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    return [i / (n_pairs - 1) for i in range(n_pairs)]


def _prepare(model, cfg, budget, log):
    if cfg.bounds is not None:
        return anchors_from_bounds(cfg.bounds)
    return utopia_nadir(model, cfg, budget, log)


def _capped_front(anchors, log, points=()):
    front = ParetoFront(list(points), status=TIME_CAP_REACHED, log=log)
    if anchors is not None:
        front.utopia, front.nadir = anchors.utopia, anchors.nadir
    return front


def uniform_sweep(model: QuadraticModel, n_pairs: int = 10,
                  cfg: Optional[SweepConfig] = None) -> ParetoFront:
    """Weighted sums on ``w1 = i/(n_pairs-1)``; the extreme weights reuse the anchors."""
    cfg = cfg or SweepConfig()
    weights = uniform_weights(n_pairs)
    budget = _Budget(cfg.time_cap_ms)
    log = []
    if budget.expired():
        return _capped_front(None, log)
    anchors = _prepare(model, cfg, budget, log)
    if anchors is None:
        return _capped_front(None, log)
    points = []
    use_anchor = {w: p for p in anchors.points for w in (p.parameter,)}
    tasks = []
    for w in weights:
        if w in use_anchor:
            points.append(replace(use_anchor[w], method="uniform", relaxation=cfg.relaxation))
            continue
        tasks.append(_Task("uniform", w, lambda w=w: weighted_subproblem(model, w, anchors,
                                                                         cfg=cfg)))
    found, capped, _ = _run_tasks(model, tasks, cfg, budget, log)
    points += found
    front = ParetoFront(points, anchors.utopia, anchors.nadir,
                        status=TIME_CAP_REACHED if capped else COMPLETED, log=log)
    return front


def epsilon_grid(step: float) -> list[float]:
    if not 0 < step <= 1:
        raise ValueError(f"step must lie in (0, 1], got {step}")
    k = int(math.floor(1.0 / step + 1e-9))
    grid = [min(1.0, round(i * step, 12)) for i in range(k + 1)]
    if grid[-1] < 1.0:
        grid.append(1.0)
    return grid


def epsilon_sweep(model: QuadraticModel, constrained: int = 2,
                  cfg: Optional[SweepConfig] = None) -> ParetoFront:
    """Minimize the free objective under ``f_j <= l_j + eps (u_j - l_j)`` on the eps grid."""
    cfg = cfg or SweepConfig()
    budget = _Budget(cfg.time_cap_ms)
    log = []
    if budget.expired():
        return _capped_front(None, log)
    anchors = _prepare(model, cfg, budget, log)
    if anchors is None:
        return _capped_front(None, log)
    j = constrained - 1
    l, u = anchors.utopia[j], anchors.nadir[j]
    factors = Factors(model)
    method = f"eps{constrained}"
    tasks = [_Task(method, e, lambda e=e: epsilon_subproblem(model, constrained, e, l, u,
                                                             anchors, cfg, factors))
             for e in epsilon_grid(cfg.step)]
    found, capped, outcomes = _run_tasks(model, tasks, cfg, budget, log)
    front = ParetoFront(found, anchors.utopia, anchors.nadir,
                        status=TIME_CAP_REACHED if capped else COMPLETED, log=log)
    front.log.append(dict(completed=sum(o is not None for o in outcomes)))
    return front


def completed_subproblems(front: ParetoFront) -> int:
    """Subproblems that finished (optimal or proven infeasible) within the budget."""
    return sum(1 for e in front.log if "parameter" in e and e["status"] != TIME_CAP)


# ---------------------------------------------------------------- AWS

def refinement_count(length: float, l_avg: float, C: float) -> int:
    """``round(C * l / l_avg)`` with halves rounded up."""
    if l_avg <= 0:
        return 0
    return int(math.floor(C * length / l_avg + 0.5))


def offsets(p_low_f1, p_high_f1, delta_J: float) -> tuple[float, float, float]:
    """Angle and offsets for a segment in normalized space.

    ``p_high_f1`` is the endpoint with the larger f1 (P1 in the cap rows),
    ``p_low_f1`` the one with the larger f2 (P2).  Returns (theta, d1, d2).
    """
    dx = p_high_f1[0] - p_low_f1[0]
    dy = p_low_f1[1] - p_high_f1[1]
    theta = math.pi / 2 if dx == 0 else math.atan2(dy, dx)
    return theta, delta_J * math.cos(theta), delta_J * math.sin(theta)


@dataclass
class _Entry:
    point: FrontPoint
    order: int


def aws(model: QuadraticModel, params: Optional[AwsParams] = None,
        cfg: Optional[SweepConfig] = None) -> ParetoFront:
    """Adaptive weighted sum on normalized objectives.

    The returned front's log holds one ``refinements`` record per round with
    the per-segment refinement counts.
    """
    params = params or AwsParams()
    cfg = cfg or SweepConfig()
    budget = _Budget(cfg.time_cap_ms)
    log = []
    if budget.expired():
        return _capped_front(None, log)
    anchors = _prepare(model, cfg, budget, log)
    if anchors is None:
        return _capped_front(None, log)
    factors = Factors(model)
    ut, sc = np.asarray(anchors.utopia), anchors.scales
    flat = np.asarray(anchors.degenerate, dtype=bool)

    def norm(pt):
        return np.where(flat, 0.0, (np.asarray(pt.f) - ut) / sc)

    entries = []
    order = 0

    def add(points):
        nonlocal order
        for p in points:
            entries.append(_Entry(p, order))
            order += 1

    # initial weighted sums with step 1/n_initial
    lambdas = [i / params.n_initial for i in range(params.n_initial + 1)]
    initial = []
    anchor_by_lam = {p.parameter: p for p in anchors.points}
    tasks = []
    for lam in lambdas:
        if lam in anchor_by_lam:
            initial.append(replace(anchor_by_lam[lam], method="aws", relaxation=cfg.relaxation))
        else:
            tasks.append(_Task("aws", lam, lambda lam=lam: weighted_subproblem(
                model, lam, anchors, cfg=cfg, factors=factors)))
    found, capped, _ = _run_tasks(model, tasks, cfg, budget, log)
    add(sorted(initial + found, key=lambda p: -p.parameter))

    exhausted = set()
    status = None

    def current():
        pts = [e for e in entries]
        nd = filter_nondominated([e.point for e in pts])
        keep = [e for e in pts if any(e.point is q for q in nd)]
        keep.sort(key=lambda e: e.order)      # earlier-found first for duplicate removal
        vals = np.array([norm(e.point) for e in keep]).reshape(-1, 2)
        idx = remove_near_duplicates(keep, vals, params.overlap_eps)
        keep = [keep[i] for i in idx]
        keep.sort(key=lambda e: (e.point.f[0], e.point.f[1]))
        return keep

    if capped:
        status = TIME_CAP_REACHED
    rounds = 0
    while status is None:
        front_entries = current()
        vals = np.array([norm(e.point) for e in front_entries]).reshape(-1, 2)
        lengths = segment_lengths(vals)
        segs = [(front_entries[i], front_entries[i + 1], lengths[i]) for i in range(len(lengths))]
        active = [s for s in segs if (s[0].order, s[1].order) not in exhausted]
        if all(s[2] < params.delta_J for s in active):
            status = CONVERGED
            break
        if rounds >= params.max_rounds:
            status = MAX_ROUNDS
            break
        l_avg = float(np.mean([s[2] for s in active]))
        counts = []
        tasks = []
        seg_of_task = []
        for a, b, length in active:
            # segments already below delta_J are converged and left alone
            n_i = refinement_count(length, l_avg, params.C) if length >= params.delta_J else 0
            counts.append(n_i)
            if n_i <= 1:
                continue
            pa, pb = norm(a.point), norm(b.point)       # a: lower f1 (P2), b: higher f1 (P1)
            # an offset above length/2 leaves no room on the segment; length/3 keeps
            # the cap box open for segments shorter than 2*delta_J
            theta, d1, d2 = offsets(pa, pb, min(params.delta_J, length / 3.0))
            caps = (pb[0] - d1, pa[1] - d2)
            for k in range(1, n_i + 1):
                lam = k / (n_i + 1)
                tasks.append(_Task("aws", lam, lambda lam=lam, caps=caps: weighted_subproblem(
                    model, lam, anchors, caps=caps, cfg=cfg, factors=factors)))
                seg_of_task.append((a.order, b.order))
        log.append(dict(refinements=counts, round=rounds))
        rounds += 1
        if not tasks:
            status = CONVERGED
            break
        before = {id(e.point) for e in entries}
        found, capped, outcomes = _run_tasks(model, tasks, cfg, budget, log)
        add(found)
        # a segment stays productive only if one of its subproblems gave a new point
        produced = {}
        for key, out in zip(seg_of_task, outcomes):
            new = isinstance(out, FrontPoint) and id(out) not in before
            if new:
                v = norm(out)
                olds = [norm(e.point) for e in entries if id(e.point) in before]
                new = all(np.linalg.norm(v - o) >= params.overlap_eps for o in olds)
            produced[key] = produced.get(key, False) or new
        for key, ok in produced.items():
            if not ok:
                exhausted.add(key)
        if capped:
            status = TIME_CAP_REACHED

    final = [e.point for e in current()]
    front = ParetoFront(final, anchors.utopia, anchors.nadir, status=status, log=log)
    return front


def refinement_sequence(front: ParetoFront) -> list[list[int]]:
    return [e["refinements"] for e in front.log if "refinements" in e]


def final_segment_lengths(front: ParetoFront) -> list[float]:
    if front.utopia is None:
        return []
    return segment_lengths(normalize(front.points, front.utopia, front.nadir, DEGENERATE_RTOL))


# ---------------------------------------------------------------- dispatch

METHODS = ("uniform", "aws", "eps1", "eps2")


def run_budgeted(model: QuadraticModel, method: str, cfg: Optional[SweepConfig] = None,
                 n_pairs: int = 10, params: Optional[AwsParams] = None) -> ParetoFront:
    """Run ``method`` under ``cfg.time_cap_ms`` (wall clock across all subproblems)."""
    cfg = cfg or SweepConfig()
    if method == "uniform":
        return uniform_sweep(model, n_pairs, cfg)
    if method == "aws":
        return aws(model, params, cfg)
    if method in ("eps1", "eps2"):
        return epsilon_sweep(model, int(method[-1]), cfg)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
