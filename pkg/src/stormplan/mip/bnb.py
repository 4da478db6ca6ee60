"""LP-based branch and bound for :class:`MipModel` instances.

Node selection is best bound with depth-first plunges; before the first
incumbent is known the search runs purely depth first.  Two branching rules
are available:

``most-fractional``
    the integer column whose value is closest to 0.5 away from an integer,
    lowest column index among ties.
``reliability``
    pseudocost branching whose pseudocosts are initialised by strong
    branching (full child LP solves) until each candidate has been observed
    ``reliability`` times in both directions.  Strong branching results also
    tighten the node: a child that is infeasible or cut off fixes the column
    to the other side.

Both rules are deterministic: equal inputs give equal node counts and
incumbents.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from .model import MipModel
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, LpSolution

log = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_GAP_LIMIT = "gap-limit"
STATUS_NODE_LIMIT = "node-limit"
STATUS_TIME_LIMIT = "time-limit"

BRANCHING_RULES = ("most-fractional", "reliability")


@dataclass
class MipOptions:
    int_tol: float = 1e-6
    rel_gap: float = 1e-6
    node_limit: int | None = None
    time_limit: float | None = None
    log_every: int = 0
    start: object = None          # optional feasible column vector used as the first incumbent
    branching: str = "most-fractional"
    reliability: int = 2          # strong-branching observations before a pseudocost is trusted
    strong_candidates: int = 10   # max candidates strong-branched per node
    strong_lookahead: int = 4     # stop strong branching after this many non-improving candidates

    def __post_init__(self):
        if self.branching not in BRANCHING_RULES:
            raise InputError(f"unknown branching rule {self.branching!r}; choose from {BRANCHING_RULES}")


@dataclass
class MipSolution:
    status: str
    objective: float = math.inf
    bound: float = -math.inf
    gap: float = math.inf
    x: np.ndarray | None = None
    nodes: int = 0
    wall_time: float = 0.0
    lp_iterations: int = 0
    log: list = field(default_factory=list)
    bound_violations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


def relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def presolve_bounds(model: MipModel):
    """Turn singleton rows into column bounds.

    Returns ``(lb, ub, keep_rows)``; ``lb``/``ub`` is ``None`` when a row or
    bound is found infeasible.
    """
    A = model.A.tocsr()
    lo, hi = model.row_bounds()
    lb = np.array(model.lb, dtype=float)
    ub = np.array(model.ub, dtype=float)
    integer = np.array(model.integer, dtype=bool)
    counts = np.diff(A.indptr)
    keep = np.ones(model.n_rows, dtype=bool)
    for r in np.nonzero(counts <= 1)[0]:
        keep[r] = False
        if counts[r] == 0:
            if lo[r] > 1e-9 or hi[r] < -1e-9:
                return None, None, keep
            continue
        j = A.indices[A.indptr[r]]
        a = A.data[A.indptr[r]]
        blo, bhi = lo[r] / a, hi[r] / a
        if a < 0:
            blo, bhi = bhi, blo
        lb[j] = max(lb[j], blo)
        ub[j] = min(ub[j], bhi)
    lb[integer] = np.ceil(lb[integer] - 1e-9)
    ub[integer] = np.floor(ub[integer] + 1e-9)
    if np.any(lb > ub + 1e-9):
        return None, None, keep
    ub = np.maximum(ub, lb)
    return lb, ub, keep


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    fixes: tuple = field(compare=False)     # ((col, lo, hi), ...) branching decisions
    basis: object = field(compare=False, default=None)
    origin: tuple | None = field(compare=False, default=None)   # (k, direction, frac, parent objective)
    dead: bool = field(compare=False, default=False)


class _Pseudocosts:
    """Per-column average objective gain per unit change, kept separately for each direction."""

    def __init__(self, n):
        self.sum = np.zeros((2, n))
        self.cnt = np.zeros((2, n), dtype=int)

    def record(self, k, direction, gain, dist):
        if dist > 1e-9 and math.isfinite(gain):
            self.sum[direction, k] += max(gain, 0.0) / dist
            self.cnt[direction, k] += 1

    def estimate(self, k, direction):
        if self.cnt[direction, k]:
            return self.sum[direction, k] / self.cnt[direction, k]
        seen = self.cnt[direction] > 0
        return float(self.sum[direction, seen].sum() / self.cnt[direction, seen].sum()) if seen.any() else 1.0

    def reliable(self, k, need):
        return min(self.cnt[0, k], self.cnt[1, k]) >= need


def _score(down, up):
    return max(down, 1e-6) * max(up, 1e-6)


class BranchAndBound:
    """Best-bound search with depth-first plunges from every selected node."""

    def __init__(self, model: MipModel, options: MipOptions | None = None):
        self.model = model
        self.opts = options or MipOptions()
        self.integer = np.nonzero(np.asarray(model.integer, dtype=bool))[0]
        self.priority = None
        pri = model.meta.get("branch_priority")
        if pri:
            fam = [model.vars.key(j)[0] for j in self.integer]
            self.priority = np.array([pri.get(f_, 0) for f_ in fam], dtype=int)
        self.pseudo = _Pseudocosts(len(self.integer))
        self.lp_iters = 0
        lb, ub, keep = presolve_bounds(model)
        self.presolve_infeasible = lb is None
        if lb is None:
            return
        self.lb0, self.ub0 = lb, ub
        lo, hi = model.row_bounds()
        A = model.A.tocsr()[keep]
        self.lp = LpProblem(A, model.obj, lb, ub, lo[keep], hi[keep])
        self.removed_rows = int((~keep).sum())

    def _bounds_for(self, fixes):
        lb = self.lb0.copy()
        ub = self.ub0.copy()
        for j, lo, hi in fixes:
            lb[j] = max(lb[j], lo)
            ub[j] = min(ub[j], hi)
        return lb, ub

    def _tol(self, incumbent):
        if not math.isfinite(incumbent):
            return 0.0
        return self.opts.rel_gap * max(1.0, abs(incumbent))

    def _solve(self, lb, ub, basis):
        sol = self.lp.solve(lb, ub, basis=basis)
        self.lp_iters += sol.iterations
        return sol

    # branching --------------------------------------------------------------
    def _candidates(self, x):
        xi = x[self.integer]
        frac = xi - np.floor(xi)
        dist = np.minimum(frac, 1.0 - frac)
        fractional = dist > self.opts.int_tol
        if self.priority is not None and fractional.any():
            fractional &= self.priority == self.priority[fractional].max()
        return np.nonzero(fractional)[0], frac

    def _most_fractional(self, cands, frac):
        dist = np.abs(frac[cands] - 0.5)
        return int(cands[int(np.argmin(dist))]), None

    def _reliability(self, cands, frac, sol, lb, ub, cutoff):
        """Pick the branching candidate.

        Returns ``(k, children)`` where ``children`` maps a direction to a
        known child bound (or ``math.inf`` when that child is infeasible or
        cut off).  ``k`` is ``None`` when strong branching proved the node
        infeasible.
        """
        opts = self.opts
        obj = sol.objective
        order = cands[np.argsort(np.abs(frac[cands] - 0.5), kind="stable")]
        best_k, best_score, best_children = None, -1.0, {}
        unreliable = [k for k in order if not self.pseudo.reliable(k, opts.reliability)]
        strong = unreliable[: opts.strong_candidates]
        stale = 0
        for k in strong:
            j = int(self.integer[k])
            f = frac[k]
            bounds = {}
            for direction in (0, 1):
                clb, cub = lb.copy(), ub.copy()
                if direction == 0:
                    cub[j] = math.floor(sol.x[j])
                else:
                    clb[j] = math.ceil(sol.x[j])
                child = self._solve(clb, cub, sol.basis)
                dist = f if direction == 0 else 1.0 - f
                if child.status == OPTIMAL:
                    self.pseudo.record(k, direction, child.objective - obj, dist)
                    bounds[direction] = child.objective if child.objective < cutoff else math.inf
                else:
                    bounds[direction] = math.inf
            if bounds[0] == math.inf or bounds[1] == math.inf:
                # one side is dead: branch here, the caller only creates the live child
                return k, bounds
            s = _score(bounds[0] - obj, bounds[1] - obj)
            if s > best_score:
                best_k, best_score, best_children = k, s, bounds
                stale = 0
            else:
                stale += 1
                if stale >= opts.strong_lookahead:
                    break
        for k in order:
            if k in strong:
                continue
            f = frac[k]
            s = _score(self.pseudo.estimate(k, 0) * f, self.pseudo.estimate(k, 1) * (1.0 - f))
            if s > best_score:
                best_k, best_score, best_children = k, s, {}
        return best_k, best_children

    # search -----------------------------------------------------------------
    def solve(self) -> MipSolution:
        t0 = time.perf_counter()
        const = self.model.obj_const
        if self.presolve_infeasible:
            return MipSolution(STATUS_INFEASIBLE, wall_time=time.perf_counter() - t0)
        opts = self.opts
        incumbent, x_best, inc_basis = math.inf, None, None
        if opts.start is not None:
            x0 = self._check_start(opts.start)
            if x0 is not None:
                incumbent, x_best = float(np.dot(self.model.obj, x0)), x0
        heap = []
        dfs = []
        seq = 0
        nodes = 0
        lines = []
        heapq.heappush(heap, _Node(-math.inf, seq, 0, ()))
        status = None
        bound_violations = 0

        def global_bound(extra=math.inf):
            b = min([nd.bound for nd in heap if not nd.dead] + [extra])
            return b if math.isfinite(b) else (incumbent if math.isfinite(incumbent) else b)

        while heap:
            while heap and heap[0].dead:
                heapq.heappop(heap)
            if not heap:
                break
            if opts.node_limit is not None and nodes >= opts.node_limit:
                status = STATUS_NODE_LIMIT
                break
            if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
                status = STATUS_TIME_LIMIT
                break
            best = heap[0].bound
            if math.isfinite(incumbent) and relative_gap(incumbent, best) <= opts.rel_gap:
                heap.clear()
                break
            # until a first incumbent exists the search is pure depth first:
            # the most recently created open node is taken instead of the best bound
            if x_best is None and dfs:
                node = dfs.pop()
            else:
                node = heapq.heappop(heap)
            if node.dead:
                continue
            node.dead = True
            if node.bound >= incumbent - self._tol(incumbent):
                continue
            current = node
            while current is not None:
                lb, ub = self._bounds_for(current.fixes)
                sol: LpSolution = self._solve(lb, ub, current.basis)
                nodes += 1
                if sol.status == UNBOUNDED and current.depth == 0:
                    return MipSolution(STATUS_UNBOUNDED, nodes=nodes, lp_iterations=self.lp_iters,
                                       wall_time=time.perf_counter() - t0)
                if sol.status != OPTIMAL:
                    current = None
                    break
                obj = sol.objective
                if current.origin is not None:
                    k0, d0, f0, pobj = current.origin
                    self.pseudo.record(k0, d0, obj - pobj, f0 if d0 == 0 else 1.0 - f0)
                if obj < current.bound - 1e-6 * max(1.0, abs(obj)):
                    bound_violations += 1
                if obj >= incumbent - self._tol(incumbent):
                    current = None
                    break
                cands, frac = self._candidates(sol.x)
                if cands.size == 0:
                    incumbent, x_best, inc_basis = obj, sol.x.copy(), sol.basis
                    x_best[self.integer] = np.round(x_best[self.integer])
                    lines.append(self._log_line(nodes, global_bound(obj), incumbent))
                    current = None
                    break
                cutoff = incumbent - self._tol(incumbent)
                if opts.branching == "reliability":
                    k, known = self._reliability(cands, frac, sol, lb, ub, cutoff)
                else:
                    k, known = self._most_fractional(cands, frac)
                known = known or {}
                j = int(self.integer[k])
                v = sol.x[j]
                f = frac[k]
                kids = []
                for direction in (0, 1):
                    cb = known.get(direction, obj)
                    if cb == math.inf:
                        continue
                    fix = (j, -math.inf, math.floor(v)) if direction == 0 else (j, math.ceil(v), math.inf)
                    seq += 1
                    kids.append(_Node(max(cb, obj), seq, current.depth + 1, current.fixes + (fix,), sol.basis,
                                      (k, direction, f, obj)))
                if not kids:
                    current = None
                    break
                if len(kids) == 1:
                    current = kids[0]
                else:
                    down, up = kids
                    first, second = (up, down) if f >= 0.5 else (down, up)
                    heapq.heappush(heap, second)
                    if x_best is None:
                        dfs.append(second)
                    current = first
                if opts.log_every and nodes % opts.log_every == 0:
                    lines.append(self._log_line(nodes, global_bound(obj), incumbent))
        best_bound = min([nd.bound for nd in heap if not nd.dead], default=incumbent)
        if status is None:
            status = STATUS_OPTIMAL if x_best is not None else STATUS_INFEASIBLE
            if x_best is not None:
                best_bound = min(best_bound, incumbent)
        elif x_best is not None and relative_gap(incumbent, best_bound) <= opts.rel_gap:
            status = STATUS_OPTIMAL
        if x_best is not None:
            x_best = self._polish(x_best, inc_basis)
        lines.append(self._log_line(nodes, best_bound, incumbent))
        return MipSolution(
            status,
            objective=incumbent + const if x_best is not None else math.inf,
            bound=best_bound + const,
            gap=relative_gap(incumbent, best_bound),
            x=x_best,
            nodes=nodes,
            wall_time=time.perf_counter() - t0,
            lp_iterations=self.lp_iters,
            log=lines,
            bound_violations=bound_violations,
        )

    def _check_start(self, x):
        x = np.asarray(x, dtype=float).copy()
        if x.shape != (self.model.n_cols,):
            log.warning("start vector has the wrong length; ignored")
            return None
        x[self.integer] = np.round(x[self.integer])
        if self.model.max_violation(x) > 1e-6:
            log.warning("start vector is infeasible; ignored")
            return None
        return x

    def _polish(self, x, basis):
        """Re-solve the LP with every integer column fixed at its rounded value."""
        lb = self.lb0.copy()
        ub = self.ub0.copy()
        lb[self.integer] = ub[self.integer] = x[self.integer]
        sol = self.lp.solve(lb, ub, basis=basis)
        if sol.status == OPTIMAL:
            y = sol.x.copy()
            y[self.integer] = x[self.integer]
            return np.minimum(np.maximum(y, self.lb0), self.ub0)
        return x

    @staticmethod
    def _log_line(nodes, bound, incumbent):
        gap = relative_gap(incumbent, bound)
        return f"node {nodes:7d}  bound {bound:.9g}  incumbent {incumbent:.9g}  gap {gap:.3e}"


def solve_mip(model: MipModel, int_tol=1e-6, rel_gap=1e-6, node_limit=None, time_limit=None,
              log_every=0, start=None, branching="most-fractional") -> MipSolution:
    opts = MipOptions(int_tol=int_tol, rel_gap=rel_gap, node_limit=node_limit,
                      time_limit=time_limit, log_every=log_every, start=start, branching=branching)
    return BranchAndBound(model, opts).solve()


def solve_lp(model: MipModel) -> LpSolution:
    """Solve the LP relaxation of ``model`` (integrality ignored) with the primal simplex."""
    lo, hi = model.row_bounds()
    lp = LpProblem(model.A, model.obj, model.lb, model.ub, lo, hi)
    sol = lp.solve()
    if sol.status == OPTIMAL:
        sol.objective += model.obj_const
    return sol


__all__ = ["MipOptions", "MipSolution", "BranchAndBound", "solve_mip", "solve_lp", "presolve_bounds",
           "relative_gap", "BRANCHING_RULES", "INFEASIBLE", "OPTIMAL", "UNBOUNDED",
           "STATUS_OPTIMAL", "STATUS_INFEASIBLE", "STATUS_UNBOUNDED", "STATUS_GAP_LIMIT",
           "STATUS_NODE_LIMIT", "STATUS_TIME_LIMIT"]
