"""Bridge to the HiGHS solver (optional dependency ``highspy``).

Used for cross-checking the embedded solver and as the external solver path
for instances that are too large for plain branch and bound.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from ..errors import StormPlanError
from .bnb import (STATUS_INFEASIBLE, STATUS_NODE_LIMIT, STATUS_OPTIMAL, STATUS_TIME_LIMIT,
                  STATUS_UNBOUNDED, MipSolution, relative_gap)
from .model import MipModel


def _highspy():
    try:
        import highspy
    except ImportError as exc:   # pragma: no cover - depends on the environment
        raise StormPlanError("the external solver path needs the 'highspy' package "
                             "(pip install highspy)") from exc
    return highspy


def highs_available() -> bool:
    try:
        _highspy()
    except StormPlanError:
        return False
    return True


def _status(h, highspy) -> str:
    ms = h.getModelStatus()
    S = highspy.HighsModelStatus
    if ms == S.kOptimal:
        return STATUS_OPTIMAL
    if ms == S.kInfeasible:
        return STATUS_INFEASIBLE
    if ms in (S.kUnbounded, S.kUnboundedOrInfeasible):
        return STATUS_UNBOUNDED
    if ms == S.kTimeLimit:
        return STATUS_TIME_LIMIT
    return STATUS_NODE_LIMIT


def _run(h, highspy, rel_gap, time_limit, node_limit, offset=0.0, threads=1) -> MipSolution:
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", float(rel_gap))
    h.setOptionValue("threads", int(threads))
    h.setOptionValue("random_seed", 0)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))
    t0 = time.perf_counter()
    h.run()
    status = _status(h, highspy)
    info = h.getInfo()
    sol = h.getSolution()
    has_x = info.primal_solution_status == 2   # feasible point available
    x = np.asarray(sol.col_value, dtype=float) if has_x else None
    obj = h.getInfo().objective_function_value + offset if has_x else math.inf
    bound = getattr(info, "mip_dual_bound", obj)
    bound = bound + offset if math.isfinite(bound) else bound
    if status == STATUS_OPTIMAL and not np.isfinite(bound):
        bound = obj
    return MipSolution(status, objective=obj, bound=bound, gap=relative_gap(obj, bound),
                       x=x, nodes=int(getattr(info, "mip_node_count", 0) or 0),
                       wall_time=time.perf_counter() - t0,
                       lp_iterations=int(getattr(info, "simplex_iteration_count", 0) or 0))


def solve_highs(m: MipModel, rel_gap=1e-6, time_limit=None, node_limit=None, threads=1) -> MipSolution:
    """Solve ``m`` with HiGHS, passing the matrix directly (no file round trip)."""
    highspy = _highspy()
    inf = highspy.kHighsInf
    lo, hi = m.row_bounds()
    A = m.A.tocsc()
    lp = highspy.HighsLp()
    lp.num_col_ = m.n_cols
    lp.num_row_ = m.n_rows
    lp.col_cost_ = np.asarray(m.obj, dtype=float)
    lp.col_lower_ = np.where(np.isinf(m.lb), -inf, m.lb)
    lp.col_upper_ = np.where(np.isinf(m.ub), inf, m.ub)
    lp.row_lower_ = np.where(np.isinf(lo), -inf, lo)
    lp.row_upper_ = np.where(np.isinf(hi), inf, hi)
    lp.offset_ = float(m.obj_const)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr
    lp.a_matrix_.index_ = A.indices
    lp.a_matrix_.value_ = A.data
    if any(m.integer):
        lp.integrality_ = [highspy.HighsVarType.kInteger if b else highspy.HighsVarType.kContinuous
                           for b in m.integer]
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.passModel(lp)
    out = _run(h, highspy, rel_gap, time_limit, node_limit, threads=threads)
    if out.x is not None:
        x = out.x
        ints = np.asarray(m.integer, dtype=bool)
        x[ints] = np.round(x[ints])
    return out


def solve_lp_file(path, rel_gap=1e-6, time_limit=None) -> MipSolution:
    """Read an LP file with HiGHS's own parser and solve it.

    Column values are returned in HiGHS's column order; ``names`` are attached
    to the solution as ``solution.names``.
    """
    highspy = _highspy()
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    st = h.readModel(str(Path(path)))
    if st != highspy.HighsStatus.kOk:
        raise StormPlanError(f"HiGHS could not read {path}")
    out = _run(h, highspy, rel_gap, time_limit, None)
    out.names = list(h.getLp().col_names_)
    return out
