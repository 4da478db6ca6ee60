"""Locating the constraint family that makes a model infeasible."""

from .bnb import STATUS_INFEASIBLE, solve_lp


def row_family(name: str) -> str:
    return name.split("[", 1)[0]


def families(m) -> list:
    """Row families in the order they were added."""
    seen = {}
    for name in m.row_names:
        seen.setdefault(row_family(name), None)
    return list(seen)


def first_violated_family(m):
    """Name of the first family whose rows, added in build order, make the LP relaxation infeasible.

    Returns ``"integrality"`` when every relaxation is feasible (the conflict
    needs the integer restrictions) and ``None`` when even that is not the
    case, i.e. the full relaxation is infeasible only through bounds.
    """
    fams = families(m)
    by_family = {}
    for r, name in enumerate(m.row_names):
        by_family.setdefault(row_family(name), []).append(r)
    cols = range(m.n_cols)
    if solve_lp(m.submodel(cols, rows=[])).status == STATUS_INFEASIBLE:
        return None
    rows = []
    for fam in fams:
        rows = sorted(rows + by_family[fam])
        if solve_lp(m.submodel(cols, rows=rows)).status == STATUS_INFEASIBLE:
            return fam
    return "integrality"
