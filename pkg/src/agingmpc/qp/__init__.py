"""Sparse convex QP solver (operator splitting with active-set polishing)."""

from agingmpc.qp.problem import (
    MAX_ITERATIONS, PRIMAL_INFEASIBLE, SOLVED, QpProblem, QpSolution,
    SolverSettings, kkt_residuals,
)
from agingmpc.qp.solver import Solver, solve

__all__ = [
    "QpProblem", "QpSolution", "SolverSettings", "Solver", "solve",
    "kkt_residuals", "SOLVED", "MAX_ITERATIONS", "PRIMAL_INFEASIBLE",
]
