"""Desk-scale exact solver: QP relaxations, branch-and-bound, LP export."""

from mouc.mip.bnb import (
    INFEASIBLE_STATUS,
    ITERATION_CAP,
    OPTIMAL,
    SOLVER_ERROR,
    TIME_CAP,
    BnbConfig,
    MipSolution,
    OuterCut,
    QuadConstraint,
    SubProblem,
    add_outer_cut,
    branch_and_bound,
    max_violation,
)
from mouc.mip.lpfile import dump_solution_csv, export_lp
from mouc.mip.qp import ContinuousSolution, QPEngine, QPSolverError, solve_qp

__all__ = [
    "BnbConfig", "ContinuousSolution", "INFEASIBLE_STATUS", "ITERATION_CAP", "MipSolution",
    "OPTIMAL", "OuterCut", "QPEngine", "QPSolverError", "QuadConstraint", "SOLVER_ERROR",
    "SubProblem", "TIME_CAP", "add_outer_cut", "branch_and_bound", "dump_solution_csv",
    "export_lp", "max_violation", "solve_qp",
]
