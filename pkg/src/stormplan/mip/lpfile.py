"""Reading and writing models in the CPLEX LP text format.

Column names carry their family and index tuple.  Internally they look like
``P[3,2,1]``; because several LP readers (HiGHS among them) reject square
brackets in identifiers, the writer maps them to ``P(3,2,1)`` by default.
``bracket_names=True`` keeps the internal spelling.  The reader accepts both.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from ..errors import InputError
from .model import EQ, GE, LE, MipModel

MAX_LINE = 200

_SECTIONS = {
    "minimize": "obj", "minimise": "obj", "minimum": "obj", "min": "obj",
    "subject to": "rows", "such that": "rows", "st": "rows", "s.t.": "rows",
    "bounds": "bounds", "bound": "bounds",
    "binary": "bin", "binaries": "bin", "bin": "bin",
    "general": "gen", "generals": "gen", "gen": "gen",
    "end": "end",
}


def lp_token(name: str, bracket_names: bool = False) -> str:
    """Spell an internal name as an LP identifier."""
    if bracket_names:
        return name
    return name.replace("[", "(").replace("]", ")")


def internal_name(token: str) -> str:
    """Inverse of :func:`lp_token`: ``P(3,2,1)`` becomes ``P[3,2,1]``."""
    if token.endswith(")") and "(" in token:
        head, _, rest = token.partition("(")
        return f"{head}[{rest[:-1]}]"
    return token


def _num(v: float) -> str:
    if v == math.floor(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _expr(terms) -> list:
    """Terms ``[(coef, name)]`` rendered as tokens ``['2 x', '- 3 y', ...]``."""
    out = []
    for i, (c, name) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        body = name if mag == 1.0 else f"{_num(mag)} {name}"
        if i == 0:
            out.append(body if sign == "+" else f"- {body}")
        else:
            out.append(f"{sign} {body}")
    return out


def _wrap(head: str, tokens: list) -> list:
    lines, cur = [], head
    for t in tokens:
        if len(cur) + 1 + len(t) > MAX_LINE and cur.strip():
            lines.append(cur)
            cur = "   " + t
        else:
            cur = f"{cur} {t}" if cur else t
    lines.append(cur)
    return lines


def lp_lines(m: MipModel, bracket_names: bool = False) -> list:
    names = [lp_token(n, bracket_names) for n in m.names]
    out = ["Minimize"]
    terms = [(c, names[j]) for j, c in enumerate(m.obj) if c != 0.0]
    toks = _expr(terms)
    if m.obj_const != 0.0:
        toks.append(f"{'-' if m.obj_const < 0 else '+'} {_num(abs(m.obj_const))}" if toks
                    else _num(m.obj_const))
    if not toks:
        toks = ["0"]
    out += _wrap(" obj:", toks)
    out.append("Subject To")
    A = m.A.tocsr()
    sense_tok = {LE: "<=", EQ: "=", GE: ">="}
    for r in range(m.n_rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        terms = [(A.data[t], names[A.indices[t]]) for t in range(lo, hi)]
        toks = _expr(terms) or [f"0 {names[0]}"]
        toks += [sense_tok[m.senses[r]], _num(m.rhs[r])]
        out += _wrap(f" {lp_token(m.row_names[r], bracket_names)}:", toks)
    bounds, binaries, generals = [], [], []
    used = np.zeros(m.n_cols, dtype=bool)
    used[A.indices] = True
    used[np.asarray(m.obj) != 0.0] = True
    for j, name in enumerate(names):
        lb, ub = m.lb[j], m.ub[j]
        if m.integer[j]:
            if lb == 0.0 and ub == 1.0:
                binaries.append(name)
                continue
            generals.append(name)
        if lb == ub:
            bounds.append(f" {name} = {_num(lb)}")
        elif lb == -math.inf and ub == math.inf:
            bounds.append(f" {name} free")
        elif lb == 0.0 and ub == math.inf:
            if not used[j]:
                bounds.append(f" {name} >= 0")
            continue
        else:
            lo_s = "-inf" if lb == -math.inf else _num(lb)
            hi_s = "+inf" if ub == math.inf else _num(ub)
            bounds.append(f" {lo_s} <= {name} <= {hi_s}")
    if bounds:
        out.append("Bounds")
        out += bounds
    if binaries:
        out.append("Binary")
        out += [f" {n}" for n in binaries]
    if generals:
        out.append("General")
        out += [f" {n}" for n in generals]
    out.append("End")
    return out


def export_lp_file(m: MipModel, path, bracket_names: bool = False) -> Path:
    """Write ``m`` to ``path`` in LP format and return the path."""
    path = Path(path)
    text = "\n".join(lp_lines(m, bracket_names)) + "\n"
    try:
        path.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write LP file {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# reader

_TOKEN = re.compile(r"\s*(<=|>=|=<|=>|=|<|>|[+-]|[^\s+<>=-][^\s+<>=]*)")


def _strip_comment(line: str) -> str:
    i = line.find("\\")
    return line if i < 0 else line[:i]


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return tok.lower() in ("inf", "infinity")
    return True


def _to_float(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "infinity", "+inf", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def _parse_linear(tokens):
    """Parse ``[+|-] [coef] name ...`` into ``(terms, constant)``."""
    terms, const = [], 0.0
    sign, coef = 1.0, None
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        if _is_number(tok):
            if coef is not None:
                const += sign * coef
                sign = 1.0
            coef = _to_float(tok)
            continue
        terms.append((sign * (1.0 if coef is None else coef), tok))
        sign, coef = 1.0, None
    if coef is not None:
        const += sign * coef
    return terms, const


def _statements(lines):
    """Group a section's lines into statements; a new statement starts at ``name:`` or a fresh line
    that does not begin with a sign."""
    stmts = []
    for ln in lines:
        s = ln.strip()
        if not s:
            continue
        cont = ln[:1].isspace() and stmts and s[0] in "+-" or (stmts and not _complete(stmts[-1]))
        if cont:
            stmts[-1] += " " + s
        else:
            stmts.append(s)
    return stmts


def _complete(stmt: str) -> bool:
    return bool(re.search(r"(<=|>=|=<|=>|=|<|>)\s*[-+]?[\w.+-]+\s*$", stmt))


def read_lp_file(path, internal_names: bool = True) -> MipModel:
    """Parse an LP file (the subset written by :func:`export_lp_file`, minimisation only)."""
    text = Path(path).read_text()
    sections = {"obj": [], "rows": [], "bounds": [], "bin": [], "gen": []}
    current = None
    for raw in text.splitlines():
        line = _strip_comment(raw)
        key = line.strip().lower()
        if key in _SECTIONS:
            current = _SECTIONS[key]
            if current == "end":
                break
            continue
        if key.startswith(("maximize", "maximise", "max")) and current is None:
            raise InputError("only minimisation LP files are supported")
        if current is None:
            if key:
                raise InputError(f"text before the objective section: {raw!r}")
            continue
        sections[current].append(line)

    m = MipModel()
    cols = {}

    def col(tok):
        name = internal_name(tok) if internal_names else tok
        if name not in cols:
            fam, idx = _split(name)
            cols[name] = m.add_var(fam, idx)
        return cols[name]

    obj_text = " ".join(s.strip() for s in sections["obj"])
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    terms, const = _parse_linear([t for t in _TOKEN.findall(obj_text)])
    for c, name in terms:
        m.add_obj(col(name), c)
    m.obj_const = const

    for stmt in _statements(sections["rows"]):
        name = ""
        if ":" in stmt:
            name, stmt = stmt.split(":", 1)
            name = name.strip()
        toks = _TOKEN.findall(stmt)
        pos = next(i for i, t in enumerate(toks) if t in ("<=", ">=", "=<", "=>", "=", "<", ">"))
        sense = {"<=": LE, "=<": LE, "<": LE, ">=": GE, "=>": GE, ">": GE, "=": EQ}[toks[pos]]
        lhs, lconst = _parse_linear(toks[:pos])
        rhs_terms, rconst = _parse_linear(toks[pos + 1:])
        if rhs_terms:
            raise InputError(f"row {name}: variables on the right-hand side are not supported")
        m.add_row([(col(n), c) for c, n in lhs], sense, rconst - lconst,
                  internal_name(name) if internal_names and name else name)

    for line in sections["bounds"]:
        toks = _TOKEN.findall(line.strip())
        if not toks:
            continue
        _apply_bound(m, toks, col)
    for line in sections["bin"]:
        for tok in line.split():
            j = col(tok)
            m.integer[j] = True
            m.lb[j], m.ub[j] = max(m.lb[j], 0.0), min(m.ub[j], 1.0)
    for line in sections["gen"]:
        for tok in line.split():
            m.integer[col(tok)] = True
    return m


def _split(name: str):
    if name.endswith("]") and "[" in name:
        fam, _, rest = name.partition("[")
        return fam, tuple(rest[:-1].split(","))
    return name, ()


def _merge_signs(toks):
    out, i = [], 0
    while i < len(toks):
        if toks[i] in "+-" and i + 1 < len(toks) and _is_number(toks[i + 1]):
            out.append(toks[i] + toks[i + 1] if toks[i] == "-" else toks[i + 1])
            i += 2
        else:
            out.append(toks[i])
            i += 1
    return out


def _apply_bound(m, toks, col):
    toks = _merge_signs(toks)
    if len(toks) == 2 and toks[1].lower() == "free":
        j = col(toks[0])
        m.lb[j], m.ub[j] = -math.inf, math.inf
        return
    ops = {"<=": "<=", "=<": "<=", "<": "<=", ">=": ">=", "=>": ">=", ">": ">=", "=": "="}
    if len(toks) == 5:           # lo <= x <= hi
        j = col(toks[2])
        m.lb[j], m.ub[j] = _to_float(toks[0]), _to_float(toks[4])
        return
    if len(toks) == 3:
        a, op, b = toks[0], ops[toks[1]], toks[2]
        if _is_number(a):        # number op name
            a, b = b, a
            op = {"<=": ">=", ">=": "<=", "=": "="}[op]
        j, v = col(a), _to_float(b)
        if op == "<=":
            m.ub[j] = v
        elif op == ">=":
            m.lb[j] = v
        else:
            m.lb[j] = m.ub[j] = v
        return
    raise InputError(f"cannot parse bound {' '.join(toks)!r}")


def models_equivalent(a: MipModel, b: MipModel, tol: float = 0.0) -> bool:
    """Same columns (matched by name), rows in order, bounds, integrality and objective."""
    if sorted(a.names) != sorted(b.names) or a.n_rows != b.n_rows:
        return False
    if a.senses != b.senses:
        return False
    pos = {n: j for j, n in enumerate(b.names)}
    perm = np.array([pos[n] for n in a.names], dtype=int)

    def close(u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        if not np.array_equal(np.isinf(u), np.isinf(v)):
            return False
        fin = ~np.isinf(u)
        return bool(np.all(np.abs(u[fin] - v[fin]) <= tol) and np.all(u[~fin] == v[~fin]))

    if list(np.asarray(b.integer)[perm]) != list(a.integer):
        return False
    for u, v in ((a.lb, np.asarray(b.lb)[perm]), (a.ub, np.asarray(b.ub)[perm]),
                 (a.obj, np.asarray(b.obj)[perm]), (a.rhs, b.rhs)):
        if not close(u, v):
            return False
    if abs(a.obj_const - b.obj_const) > tol:
        return False
    d = (a.A - b.A.tocsc()[:, perm]).tocsr()
    return d.nnz == 0 or float(abs(d).max()) <= tol
