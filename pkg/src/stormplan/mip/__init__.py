"""Embedded MILP toolkit: model container, primal simplex, branch and bound, LP files."""

from .bnb import (BRANCHING_RULES, STATUS_GAP_LIMIT, STATUS_INFEASIBLE, STATUS_NODE_LIMIT,
                  STATUS_OPTIMAL, STATUS_TIME_LIMIT, STATUS_UNBOUNDED, BranchAndBound, MipOptions,
                  MipSolution, relative_gap, solve_lp, solve_mip)
from .lpfile import export_lp_file, lp_lines, models_equivalent, read_lp_file
from .model import EQ, GE, INF, LE, MipModel, VarIndex, column_name
from .simplex import LpProblem, LpSolution

__all__ = [
    "BRANCHING_RULES", "STATUS_GAP_LIMIT", "STATUS_INFEASIBLE", "STATUS_NODE_LIMIT", "STATUS_OPTIMAL",
    "STATUS_TIME_LIMIT", "STATUS_UNBOUNDED", "BranchAndBound", "MipOptions", "MipSolution",
    "relative_gap", "solve_lp", "solve_mip", "export_lp_file", "lp_lines", "models_equivalent",
    "read_lp_file", "EQ", "GE", "INF", "LE", "MipModel", "VarIndex", "column_name", "LpProblem",
    "LpSolution",
]
