"""Bounded-variable revised primal simplex.

The LP ``min c.x  s.t.  lo <= A x <= hi,  l <= x <= u`` is put in the form
``A x - s = 0`` with one logical column ``s`` per row, bounded by the row
range.  The basis inverse is kept as a sparse LU factor (SuperLU) followed by
a product-form eta file, refactorised periodically.  Infeasible starts use a
composite phase 1 that minimises the sum of bound violations of the basic
variables.  Dantzig pricing is used until a run of degenerate pivots is seen,
after which Bland's rule takes over until the objective moves again.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NumericalError

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = "optimal", "infeasible", "unbounded", "iteration-limit"

BASIC, AT_LOWER, AT_UPPER, FREE_ZERO = 0, 1, 2, 3

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_RUN = 40


@dataclass
class Basis:
    """Warm-start descriptor: basic variable per row plus the status of every variable."""

    head: np.ndarray
    status: np.ndarray

    def copy(self) -> "Basis":
        return Basis(self.head.copy(), self.status.copy())


@dataclass
class LpSolution:
    status: str
    objective: float = np.nan
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    basis: Basis | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _pow2(v):
    return np.exp2(np.round(np.log2(v)))


def equilibrate(A: sp.csr_matrix, passes: int = 4):
    """Geometric-mean row/column scaling rounded to powers of two.

    Returns ``(row_scale, col_scale)`` such that ``diag(R) A diag(C)`` is better conditioned.
    """
    m, n = A.shape
    R = np.ones(m)
    C = np.ones(n)
    absA = abs(A).tocsr()
    if absA.nnz == 0:
        return R, C
    for _ in range(passes):
        S = sp.diags(R) @ absA @ sp.diags(C)
        S = S.tocsr()
        rmax = np.asarray(S.max(axis=1).todense()).ravel()
        rmin = _min_nonzero(S, axis=1)
        ok = rmax > 0
        R[ok] /= np.sqrt(rmax[ok] * rmin[ok])
        S = (sp.diags(R) @ absA @ sp.diags(C)).tocsc()
        cmax = np.asarray(S.max(axis=0).todense()).ravel()
        cmin = _min_nonzero(S, axis=0)
        ok = cmax > 0
        C[ok] /= np.sqrt(cmax[ok] * cmin[ok])
    return _pow2(R), _pow2(C)


def _min_nonzero(S, axis):
    S = S.tocsr() if axis == 1 else S.tocsc()
    out = np.full(S.shape[0] if axis == 1 else S.shape[1], np.inf)
    ptr, data = S.indptr, S.data
    for k in range(len(ptr) - 1):
        if ptr[k + 1] > ptr[k]:
            out[k] = data[ptr[k]:ptr[k + 1]].min()
    out[~np.isfinite(out)] = 1.0
    return out


class _Factor:
    """LU of a basis matrix plus a product-form eta file."""

    def __init__(self, B: sp.csc_matrix):
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise NumericalError(f"singular basis: {exc}") from None
        self.etas = []

    def ftran(self, a):
        v = self.lu.solve(np.asarray(a, dtype=float))
        for r, alpha in self.etas:
            vr = v[r] / alpha[r]
            v -= alpha * vr
            v[r] = vr
        return v

    def btran(self, c):
        w = np.array(c, dtype=float)
        for r, alpha in reversed(self.etas):
            wr = w[r]
            w[r] = (wr - (alpha @ w - alpha[r] * wr)) / alpha[r]
        return self.lu.solve(w, trans="T")

    def update(self, r, alpha):
        self.etas.append((r, alpha))


class LpProblem:
    """A scaled LP whose column bounds can be changed between solves (for branch and bound)."""

    def __init__(self, A, c, lb, ub, row_lo, row_hi, scale=True):
        A = sp.csr_matrix(A, dtype=float)
        self.m, self.n = A.shape
        if scale and A.nnz:
            R, C = equilibrate(A)
        else:
            R, C = np.ones(self.m), np.ones(self.n)
        self.R, self.C = R, C
        As = (sp.diags(R) @ A @ sp.diags(C)).tocsc()
        self.As = As
        self.AsT = As.T.tocsr()
        self.full = sp.hstack([As, -sp.identity(self.m, format="csc")], format="csc")
        self.c = np.concatenate([np.asarray(c, dtype=float) * C, np.zeros(self.m)])
        self.row_lo = np.asarray(row_lo, dtype=float) * R
        self.row_hi = np.asarray(row_hi, dtype=float) * R
        self.base_lb = np.asarray(lb, dtype=float)
        self.base_ub = np.asarray(ub, dtype=float)

    # bounds in scaled space for all n + m variables
    def _bounds(self, lb, ub):
        L = np.concatenate([np.asarray(lb, dtype=float) / self.C, self.row_lo])
        U = np.concatenate([np.asarray(ub, dtype=float) / self.C, self.row_hi])
        return L, U

    def slack_basis(self, L, U) -> Basis:
        status = np.empty(self.n + self.m, dtype=np.int8)
        fin_l = np.isfinite(L)
        fin_u = np.isfinite(U)
        status[:] = np.where(fin_l, AT_LOWER, np.where(fin_u, AT_UPPER, FREE_ZERO))
        # start each structural at the bound with the cheaper cost when both exist
        both = fin_l & fin_u
        status[both & (self.c < 0)] = AT_UPPER
        head = np.arange(self.n, self.n + self.m)
        status[head] = BASIC
        return Basis(head, status)

    def solve(self, lb=None, ub=None, basis: Basis | None = None, max_iter=None) -> LpSolution:
        lb = self.base_lb if lb is None else lb
        ub = self.base_ub if ub is None else ub
        L, U = self._bounds(lb, ub)
        if np.any(L > U + 1e-12):
            return LpSolution(INFEASIBLE)
        if self.m == 0:
            return self._solve_bounds_only(L, U)
        if basis is None:
            basis = self.slack_basis(L, U)
        else:
            basis = basis.copy()
        max_iter = max_iter or 50 * (self.m + self.n) + 1000
        run = _SimplexRun(self, L, U, basis)
        for attempt in range(3):
            try:
                status = run.run(max_iter)
                break
            except NumericalError:
                if attempt == 2:
                    raise
                log.debug("numerical trouble, restarting from slack basis")
                run = _SimplexRun(self, L, U, self.slack_basis(L, U))
        x = run.x[: self.n] * self.C
        sol = LpSolution(status, iterations=run.iters, basis=Basis(run.head.copy(), run.status.copy()))
        if status == OPTIMAL:
            sol.x = x
            sol.objective = float(self.c[: self.n] @ run.x[: self.n])
        return sol

    def _solve_bounds_only(self, L, U):
        c = self.c[: self.n]
        x = np.where(c > 0, L[: self.n], np.where(c < 0, U[: self.n], np.where(np.isfinite(L[: self.n]), L[: self.n], np.where(np.isfinite(U[: self.n]), U[: self.n], 0.0))))
        if not np.all(np.isfinite(x)):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, float(c @ x), x * self.C, None, 0)


class _SimplexRun:
    def __init__(self, prob: LpProblem, L, U, basis: Basis):
        self.p = prob
        self.L, self.U = L, U
        self.head = basis.head.astype(np.int64)
        self.status = basis.status.astype(np.int8)
        self.iters = 0
        self.x = np.zeros(prob.n + prob.m)
        self._place_nonbasic()
        self._refactor()

    def _place_nonbasic(self):
        L, U, st, x = self.L, self.U, self.status, self.x
        nb = st != BASIC
        # a nonbasic variable whose recorded bound vanished is moved to a finite one
        lo = nb & (st == AT_LOWER) & ~np.isfinite(L)
        st[lo] = np.where(np.isfinite(U[lo]), AT_UPPER, FREE_ZERO)
        up = nb & (st == AT_UPPER) & ~np.isfinite(U)
        st[up] = np.where(np.isfinite(L[up]), AT_LOWER, FREE_ZERO)
        fz = nb & (st == FREE_ZERO) & np.isfinite(L)
        st[fz] = AT_LOWER
        fz = nb & (st == FREE_ZERO) & np.isfinite(U)
        st[fz] = AT_UPPER
        x[st == AT_LOWER] = L[st == AT_LOWER]
        x[st == AT_UPPER] = U[st == AT_UPPER]
        x[st == FREE_ZERO] = 0.0

    def _refactor(self):
        B = self.p.full[:, self.head]
        try:
            self.f = _Factor(B.tocsc())
        except NumericalError:
            # replace the basis by the all-logical one, which is always nonsingular
            p = self.p
            self.status[self.head] = AT_LOWER
            self.head = np.arange(p.n, p.n + p.m)
            self.status[self.head] = BASIC
            self._place_nonbasic()
            self.f = _Factor(self.p.full[:, self.head].tocsc())
        self._recompute_xb()

    def _recompute_xb(self):
        p = self.p
        v = self.x.copy()
        v[self.head] = 0.0
        rhs = -(p.As @ v[: p.n] - v[p.n:])
        self.x[self.head] = self.f.ftran(rhs)

    def _column(self, j):
        p = self.p
        if j < p.n:
            col = np.zeros(p.m)
            s, e = p.As.indptr[j], p.As.indptr[j + 1]
            col[p.As.indices[s:e]] = p.As.data[s:e]
            return col
        col = np.zeros(p.m)
        col[j - p.n] = -1.0
        return col

    def _reduced_costs(self, cB):
        p = self.p
        y = self.f.btran(cB)
        d = np.empty(p.n + p.m)
        d[: p.n] = self._cost[: p.n] - p.AsT @ y
        d[p.n:] = self._cost[p.n:] + y
        return d

    def run(self, max_iter) -> str:
        p, L, U = self.p, self.L, self.U
        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            if self.iters >= max_iter:
                return ITERATION_LIMIT
            xb = self.x[self.head]
            Lb, Ub = L[self.head], U[self.head]
            below = xb < Lb - PRIMAL_TOL
            above = xb > Ub + PRIMAL_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cB = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                self._cost = np.zeros(p.n + p.m)
            else:
                cB = p.c[self.head]
                self._cost = p.c
            d = self._reduced_costs(cB)
            st = self.status
            movable = U > L
            inc = ((st == AT_LOWER) | (st == FREE_ZERO)) & (d < -DUAL_TOL) & movable
            dec = ((st == AT_UPPER) | (st == FREE_ZERO)) & (d > DUAL_TOL) & movable
            cand = np.nonzero(inc | dec)[0]
            if cand.size == 0:
                if phase1:
                    # confirm with fresh values before declaring infeasibility
                    if since_refactor:
                        self._refactor()
                        since_refactor = 0
                        continue
                    return INFEASIBLE
                if since_refactor:
                    # re-check optimality and feasibility on a fresh factor
                    self._refactor()
                    since_refactor = 0
                    continue
                return OPTIMAL
            if bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if inc[q] else -1.0

            alpha = self.f.ftran(self._column(q))
            delta = -direction * alpha      # d x_B / d t
            t, r, leave_at = self._ratio(delta, xb, Lb, Ub, phase1, bland)
            flip = U[q] - L[q]
            if np.isfinite(flip) and (r < 0 or flip <= t):
                # bound flip of the entering variable, no basis change
                t = flip
                self.x[q] += direction * t
                self.x[self.head] += t * delta
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                self.iters += 1
                degenerate = 0
                bland = False
                continue
            if r < 0:
                if phase1:
                    raise NumericalError("phase 1 ratio test found no blocking variable")
                return UNBOUNDED
            if abs(alpha[r]) < PIVOT_TOL:
                if since_refactor:
                    self._refactor()
                    since_refactor = 0
                    continue
                raise NumericalError("pivot element too small")
            leaving = int(self.head[r])
            self.x[q] += direction * t
            self.x[self.head] += t * delta
            self.x[leaving] = leave_at
            self.status[leaving] = AT_LOWER if leave_at == L[leaving] else AT_UPPER
            self.status[q] = BASIC
            self.head[r] = q
            self.iters += 1
            if t <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0
            else:
                self.f.update(r, alpha)

    def _ratio(self, delta, xb, Lb, Ub, phase1, bland):
        """Harris two-pass ratio test; returns (step, row, bound the leaving variable lands on)."""
        dec = delta < -PIVOT_TOL
        inc = delta > PIVOT_TOL
        if phase1:
            # first breakpoint rule: infeasible variables block where they become feasible
            below = xb < Lb - PRIMAL_TOL
            above = xb > Ub + PRIMAL_TOL
            feas = ~(below | above)
            lo_target = np.where(feas, Lb, np.where(above, Ub, -np.inf))
            hi_target = np.where(feas, Ub, np.where(below, Lb, np.inf))
        else:
            lo_target, hi_target = Lb, Ub
        ratios = np.full(delta.shape, np.inf)
        relaxed = np.full(delta.shape, np.inf)
        m1 = dec & np.isfinite(lo_target)
        ratios[m1] = (xb[m1] - lo_target[m1]) / -delta[m1]
        relaxed[m1] = (xb[m1] - lo_target[m1] + PRIMAL_TOL) / -delta[m1]
        m2 = inc & np.isfinite(hi_target)
        ratios[m2] = (hi_target[m2] - xb[m2]) / delta[m2]
        relaxed[m2] = (hi_target[m2] - xb[m2] + PRIMAL_TOL) / delta[m2]
        if not np.isfinite(relaxed).any():
            return np.inf, -1, 0.0
        if bland:
            tmin = ratios.min()
            ties = np.nonzero(ratios <= tmin + 1e-12)[0]
            r = int(ties[np.argmin(self.head[ties])])
        else:
            tmax = relaxed.min()
            ok = np.nonzero(ratios <= tmax)[0]
            r = int(ok[np.argmax(np.abs(delta[ok]))])
        t = max(ratios[r], 0.0)
        leave_at = lo_target[r] if delta[r] < 0 else hi_target[r]
        return t, r, leave_at


def solve_lp_arrays(A, c, lb, ub, row_lo, row_hi, scale=True) -> LpSolution:
    return LpProblem(A, c, lb, ub, row_lo, row_hi, scale).solve()
