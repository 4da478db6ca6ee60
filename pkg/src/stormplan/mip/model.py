"""Sparse MILP container with a name-spaced variable registry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import InputError

LE, EQ, GE = "<=", "=", ">="
INF = np.inf


def column_name(family: str, index: tuple) -> str:
    """Canonical column name, e.g. ``P[3,2,1]``; scalars get no brackets."""
    if not index:
        return family
    return f"{family}[{','.join(str(i) for i in index)}]"


class VarIndex:
    """Bijection between ``(family, index-tuple)`` keys and column numbers."""

    def __init__(self):
        self._col = {}
        self._keys = []

    def add(self, family: str, index: tuple) -> int:
        key = (family, tuple(index))
        if key in self._col:
            raise InputError(f"variable {column_name(*key)} registered twice")
        self._col[key] = len(self._keys)
        self._keys.append(key)
        return self._col[key]

    def __getitem__(self, key) -> int:
        family, index = key
        return self._col[(family, tuple(index))]

    def get(self, family, index, default=None):
        return self._col.get((family, tuple(index)), default)

    def __contains__(self, key) -> bool:
        family, index = key
        return (family, tuple(index)) in self._col

    def __len__(self):
        return len(self._keys)

    def key(self, col: int) -> tuple:
        return self._keys[col]

    def family(self, family: str) -> dict:
        """``{index: column}`` for one family."""
        return {idx: c for (fam, idx), c in self._col.items() if fam == family}

    def families(self) -> list:
        seen = []
        for fam, _ in self._keys:
            if fam not in seen:
                seen.append(fam)
        return seen

    def names(self) -> list:
        return [column_name(f, i) for f, i in self._keys]


@dataclass
class MipModel:
    """Minimisation MILP ``min c.x  s.t.  rows, lb <= x <= ub, x_j integer for j in integrality``.

    Rows are stored as COO triplets plus a sense and right-hand side per row.
    """

    vars: VarIndex = field(default_factory=VarIndex)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    integer: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    obj_const: float = 0.0
    row_i: list = field(default_factory=list)
    row_j: list = field(default_factory=list)
    row_v: list = field(default_factory=list)
    senses: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    row_names: list = field(default_factory=list)
    big_m: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _A: object = field(default=None, repr=False)

    # building --------------------------------------------------------------
    def add_var(self, family, index=(), lb=0.0, ub=INF, integer=False, obj=0.0) -> int:
        col = self.vars.add(family, tuple(index))
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(bool(integer))
        self.obj.append(float(obj))
        self._A = None
        return col

    def add_binary(self, family, index=(), obj=0.0) -> int:
        return self.add_var(family, index, 0.0, 1.0, True, obj)

    def add_row(self, terms, sense, rhs, name="") -> int:
        """Append ``sum(coef * x[col]) sense rhs``; ``terms`` is an iterable of ``(col, coef)``."""
        if sense not in (LE, EQ, GE):
            raise InputError(f"bad row sense {sense!r}")
        r = len(self.senses)
        merged = {}
        for col, coef in terms:
            if not 0 <= col < len(self.vars):
                raise InputError(f"row {name or r} references unregistered column {col}")
            merged[col] = merged.get(col, 0.0) + float(coef)
        for col, coef in merged.items():
            if coef != 0.0:
                self.row_i.append(r)
                self.row_j.append(col)
                self.row_v.append(coef)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{r}")
        self._A = None
        return r

    def add_obj(self, col: int, coef: float):
        self.obj[col] += float(coef)

    def fix(self, col: int, value: float):
        self.lb[col] = self.ub[col] = float(value)

    # views -----------------------------------------------------------------
    @property
    def n_cols(self) -> int:
        return len(self.vars)

    @property
    def n_rows(self) -> int:
        return len(self.senses)

    @property
    def A(self) -> sp.csr_matrix:
        if self._A is None or self._A.shape != (self.n_rows, self.n_cols):
            self._A = sp.csr_matrix((self.row_v, (self.row_i, self.row_j)),
                                    shape=(self.n_rows, self.n_cols))
        return self._A

    def row_bounds(self):
        """Per-row ``(lo, hi)`` arrays equivalent to the senses."""
        rhs = np.asarray(self.rhs, dtype=float)
        s = np.asarray(self.senses)
        lo = np.where(s == LE, -INF, rhs)
        hi = np.where(s == GE, INF, rhs)
        return lo, hi

    @property
    def names(self) -> list:
        return self.vars.names()

    def col(self, family, *index) -> int:
        return self.vars[(family, index)]

    def objective_value(self, x) -> float:
        return float(np.dot(self.obj, x) + self.obj_const)

    def residuals(self, x) -> np.ndarray:
        """Per-row constraint violation (0 when satisfied)."""
        ax = self.A @ np.asarray(x, dtype=float)
        lo, hi = self.row_bounds()
        return np.maximum(0.0, np.maximum(lo - ax, ax - hi))

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        rows = self.residuals(x)
        cols = np.maximum(0.0, np.maximum(np.asarray(self.lb) - x, x - np.asarray(self.ub)))
        return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))

    def stats(self) -> dict:
        return {
            "rows": self.n_rows,
            "columns": self.n_cols,
            "binaries": int(sum(1 for j in range(self.n_cols)
                                if self.integer[j] and self.lb[j] >= 0 and self.ub[j] <= 1)),
            "integers": int(sum(self.integer)),
            "nonzeros": len(self.row_v),
            "big_m": dict(self.big_m),
        }

    def copy(self) -> "MipModel":
        m = MipModel()
        m.vars = self.vars
        m.lb, m.ub = list(self.lb), list(self.ub)
        m.integer, m.obj = list(self.integer), list(self.obj)
        m.obj_const = self.obj_const
        m.row_i, m.row_j, m.row_v = list(self.row_i), list(self.row_j), list(self.row_v)
        m.senses, m.rhs, m.row_names = list(self.senses), list(self.rhs), list(self.row_names)
        m.big_m, m.meta = dict(self.big_m), dict(self.meta)
        return m

    def submodel(self, cols, rows=None) -> "MipModel":
        """Restriction to the columns ``cols`` (in the given order).

        ``rows`` defaults to every row whose nonzeros all fall in ``cols``.
        Names, bounds, integrality and objective coefficients are carried
        over; the objective constant is not.
        """
        cols = [int(c) for c in cols]
        pos = np.full(self.n_cols, -1, dtype=int)
        pos[cols] = np.arange(len(cols))
        A = self.A
        if rows is None:
            inside = pos >= 0
            per_row_out = np.diff(A.indptr) - np.add.reduceat(
                np.r_[inside[A.indices], 0].astype(int), A.indptr[:-1]) if A.nnz else np.zeros(self.n_rows, int)
            rows = np.nonzero(per_row_out == 0)[0]
        m = MipModel()
        for c in cols:
            fam, idx = self.vars.key(c)
            m.add_var(fam, idx, self.lb[c], self.ub[c], self.integer[c], self.obj[c])
        for r in rows:
            lo, hi = A.indptr[r], A.indptr[r + 1]
            terms = [(int(pos[A.indices[t]]), A.data[t]) for t in range(lo, hi)]
            if any(j < 0 for j, _ in terms):
                raise InputError(f"row {self.row_names[r]} uses columns outside the submodel")
            m.add_row(terms, self.senses[r], self.rhs[r], self.row_names[r])
        m.big_m = dict(self.big_m)
        return m

    def relaxed(self) -> "MipModel":
        m = self.copy()
        m.integer = [False] * self.n_cols
        return m
