"""SAA mixed-integer model: DER placement, multi-period repair scheduling and
islanded LinDistFlow dispatch for every sampled failure scenario.

Column families (indices in brackets):

* stage I: ``ysc[i]`` site developed, ``ygc[i,d]`` DER d at site i
* repairs (failed lines plus the substation line only): ``yline[e,k,s]``, ``kline[e,k,s]``
* per node: ``lcc``, ``pc``, ``qc``, ``pt``, ``qt``, ``nu`` (continuous), ``kcc`` (binary),
  all indexed ``[i,k,s]``; ``nu`` also exists for the substation node
* per line: ``P[e,k,s]``, ``Q[e,k,s]``
* per site and DER: ``pg[i,d,k,s]``, ``qg[i,d,k,s]``

Lines that did not fail carry no repair columns; their operational status is
the constant 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .errors import InputError
from .failures import FailureScenario
from .mip.model import EQ, GE, LE, MipModel
from .network import DerSpec, Feeder

log = logging.getLogger(__name__)

NU_LB = 0.5
NU_UB = 1.5


@dataclass(frozen=True)
class ResourceLimits:
    G: int
    Y: int
    K: int | None = None

    def __post_init__(self):
        if self.G < 0 or self.Y < 1 or (self.K is not None and self.K < 1):
            raise InputError("need G >= 0, Y >= 1 and K >= 1")


@dataclass(frozen=True)
class Allocation:
    """Stage-I decision: developed sites and the DER-to-site map."""

    ysc: dict          # site -> 0/1
    ygc: dict          # (site, d) -> 0/1

    def ders_at(self, site) -> int:
        return sum(v for (i, _), v in self.ygc.items() if i == site)

    @property
    def n_ders(self) -> int:
        return sum(self.ygc.values())

    @classmethod
    def empty(cls, f: Feeder, der: DerSpec) -> "Allocation":
        return cls({i: 0 for i in f.sites}, {(i, d): 0 for i in f.sites for d in range(der.count)})

    @classmethod
    def place(cls, f: Feeder, der: DerSpec, counts: dict) -> "Allocation":
        """Allocation with ``counts[site]`` DERs at each listed site (DERs assigned in order)."""
        alloc = cls.empty(f, der)
        ysc, ygc = dict(alloc.ysc), dict(alloc.ygc)
        d = 0
        for site, n in counts.items():
            if site not in ysc:
                raise InputError(f"{site!r} is not a candidate DER site")
            for _ in range(n):
                if d >= der.count:
                    raise InputError("more DERs requested than available")
                ygc[(site, d)] = 1
                d += 1
            ysc[site] = int(n > 0)
        return cls(ysc, ygc)


def effective_failures(f: Feeder, scenario: FailureScenario) -> list:
    """Failed lines of a scenario plus the substation line, in feeder order."""
    failed = set(scenario.failed(f.edge_ids))
    failed.add(f.substation_edge)
    return [e for e in f.edge_ids if e in failed]


def horizon_K(f: Feeder, scenarios, Y: int) -> int:
    """Shortest horizon that fits every repair with no work at k=0 and reconnection at K."""
    if Y < 1:
        raise InputError("Y must be at least 1")
    worst = max(len(effective_failures(f, s)) for s in scenarios)
    return 1 + math.ceil(worst / Y)


def big_m_values(f: Feeder, scale: float = 1.0) -> dict:
    lf = 2.0 * f.total_pc()
    lq = 2.0 * f.total_qc()
    if lq <= 0:
        lq = lf
    return {"flow_p": scale * lf, "flow_q": scale * lq, "voltage": scale * 2.0 * (NU_UB - NU_LB)}


def expected_column_count(f: Feeder, der: DerSpec, scenarios, K: int) -> int:
    """Closed-form column count of :func:`build_saa_mip` (used as a builder check)."""
    U, D, N, E = len(f.sites), der.count, len(f.nodes), len(f.lines)
    per_period_fixed = 7 * N + 1 + 2 * E + 2 * U * D
    total = U + U * D
    for s in scenarios:
        total += (K + 1) * (2 * len(effective_failures(f, s)) + per_period_fixed)
    return total


# ---------------------------------------------------------------------------
# registration

def _register_stage1(m: MipModel, f: Feeder, der: DerSpec, alloc: Allocation | None = None):
    for i in f.sites:
        c = m.add_binary("ysc", (i,))
        if alloc is not None:
            m.fix(c, alloc.ysc.get(i, 0))
    for i in f.sites:
        for d in range(der.count):
            c = m.add_binary("ygc", (i, d))
            if alloc is not None:
                m.fix(c, alloc.ygc.get((i, d), 0))


def _register_scenario(m: MipModel, f: Feeder, der: DerSpec, s: int, scenario: FailureScenario, K: int):
    eff = effective_failures(f, scenario)
    bm = m.big_m
    d_count = der.count
    for k in range(K + 1):
        for e in eff:
            m.add_binary("yline", (e, k, s))
            m.add_binary("kline", (e, k, s))
        for n in f.nodes:
            i = n.name
            gen_p = d_count * der.pg_max if n.site else 0.0
            gen_q = d_count * der.pf_max * der.pg_max if n.site else 0.0
            m.add_var("lcc", (i, k, s), 0.0, 1.0)
            m.add_var("pc", (i, k, s), 0.0, n.pc_max)
            m.add_var("qc", (i, k, s), min(0.0, n.qc_max), max(0.0, n.qc_max))
            # implied by the load and net-injection rows
            m.add_var("pt", (i, k, s), -gen_p, n.pc_max)
            m.add_var("qt", (i, k, s), min(0.0, n.qc_max) - gen_q, max(0.0, n.qc_max) + gen_q)
            m.add_var("nu", (i, k, s), NU_LB, NU_UB)
            m.add_binary("kcc", (i, k, s))
        m.add_var("nu", (f.substation, k, s), NU_LB, NU_UB)
        for ln in f.lines:
            m.add_var("P", (ln.id, k, s), -bm["flow_p"], bm["flow_p"])
            m.add_var("Q", (ln.id, k, s), -bm["flow_q"], bm["flow_q"])
        for i in f.sites:
            for d in range(d_count):
                m.add_var("pg", (i, d, k, s), 0.0, der.pg_max)
                m.add_var("qg", (i, d, k, s), -der.pf_max * der.pg_max, der.pf_max * der.pg_max)
    return eff


# ---------------------------------------------------------------------------
# constraint families

def add_placement_constraints(m: MipModel, f: Feeder, der: DerSpec, limits: ResourceLimits):
    v = m.vars
    D = range(der.count)
    for i in f.sites:
        ygc = [v["ygc", (i, d)] for d in D]
        m.add_row([(v["ysc", (i,)], 1.0)] + [(c, -1.0) for c in ygc], LE, 0.0, f"site_needs_der[{i}]")
        m.add_row([(c, 1.0) for c in ygc] + [(v["ysc", (i,)], -float(der.count))], LE, 0.0,
                  f"der_needs_site[{i}]")
    for d in D:
        m.add_row([(v["ygc", (i, d)], 1.0) for i in f.sites], LE, 1.0, f"one_site[{d}]")
    m.add_row([(v["ygc", (i, d)], 1.0) for i in f.sites for d in D], LE, float(limits.G), "der_budget")
    # homogeneous DERs: DER d may be used only if DER d-1 is
    for d in range(1, der.count):
        m.add_row([(v["ygc", (i, d)], 1.0) for i in f.sites] + [(v["ygc", (i, d - 1)], -1.0) for i in f.sites],
                  LE, 0.0, f"der_order[{d}]")


def add_repair_constraints(m: MipModel, f: Feeder, s: int, eff: list, limits: ResourceLimits, K: int):
    v = m.vars
    sub = f.substation_edge
    for e in eff:
        m.add_row([(v["yline", (e, 0, s)], 1.0)], EQ, 0.0, f"no_repair_k0[{e},{s}]")
        m.add_row([(v["kline", (e, 0, s)], 1.0)], EQ, 1.0, f"damaged_k0[{e},{s}]")
        for k in range(1, K + 1):
            m.add_row([(v["kline", (e, k, s)], 1.0), (v["kline", (e, k - 1, s)], -1.0),
                       (v["yline", (e, k, s)], 1.0)], EQ, 0.0, f"repair_state[{e},{k},{s}]")
    for k in range(K + 1):
        m.add_row([(v["yline", (e, k, s)], 1.0) for e in eff], LE, float(limits.Y), f"crew[{k},{s}]")
    m.add_row([(v["yline", (sub, K, s)], 1.0)], EQ, 1.0, f"reconnect[{s}]")


def add_dispatch_constraints(m: MipModel, f: Feeder, der: DerSpec, s: int, K: int):
    v = m.vars
    L = m.big_m["voltage"]
    D = range(der.count)
    for k in range(K + 1):
        for i in f.sites:
            for d in D:
                pg = v["pg", (i, d, k, s)]
                qg = v["qg", (i, d, k, s)]
                ygc = v["ygc", (i, d)]
                m.add_row([(pg, 1.0), (ygc, -der.pg_max)], LE, 0.0, f"der_cap[{i},{d},{k},{s}]")
                m.add_row([(qg, 1.0), (pg, -der.pf_max)], LE, 0.0, f"pf_hi[{i},{d},{k},{s}]")
                m.add_row([(qg, -1.0), (pg, -der.pf_max)], LE, 0.0, f"pf_lo[{i},{d},{k},{s}]")
                if 1 <= k <= K - 1:
                    nu = v["nu", (i, k, s)]
                    # |nu - (nu_ref - kq qg)| <= (1 - ygc) L
                    m.add_row([(nu, 1.0), (qg, der.kq), (ygc, L)], LE, der.nu_ref + L, f"droop_hi[{i},{d},{k},{s}]")
                    m.add_row([(nu, -1.0), (qg, -der.kq), (ygc, L)], LE, -der.nu_ref + L, f"droop_lo[{i},{d},{k},{s}]")
        for n in f.nodes:
            i = n.name
            lcc, kcc, nu = v["lcc", (i, k, s)], v["kcc", (i, k, s)], v["nu", (i, k, s)]
            pc, qc = v["pc", (i, k, s)], v["qc", (i, k, s)]
            m.add_row([(pc, 1.0), (lcc, -n.pc_max)], EQ, 0.0, f"load_p[{i},{k},{s}]")
            m.add_row([(qc, 1.0), (lcc, -n.qc_max)], EQ, 0.0, f"load_q[{i},{k},{s}]")
            m.add_row([(lcc, 1.0), (kcc, n.lcc_min)], GE, n.lcc_min, f"lcc_min[{i},{k},{s}]")
            m.add_row([(lcc, 1.0), (kcc, 1.0)], LE, 1.0, f"lcc_max[{i},{k},{s}]")
            m.add_row([(kcc, 1.0), (nu, 1.0)], GE, n.v_min, f"undervolt[{i},{k},{s}]")
            m.add_row([(kcc, 1.0), (nu, -1.0)], GE, -n.v_max, f"overvolt[{i},{k},{s}]")
            gen_p = [(v["pg", (i, d, k, s)], 1.0) for d in D] if n.site else []
            gen_q = [(v["qg", (i, d, k, s)], 1.0) for d in D] if n.site else []
            m.add_row([(v["pt", (i, k, s)], 1.0), (pc, -1.0)] + gen_p, EQ, 0.0, f"net_p[{i},{k},{s}]")
            m.add_row([(v["qt", (i, k, s)], 1.0), (qc, -1.0)] + gen_q, EQ, 0.0, f"net_q[{i},{k},{s}]")


def add_powerflow_constraints(m: MipModel, f: Feeder, s: int, eff: list, K: int, v_nom: float | None = None):
    v = m.vars
    bm = m.big_m
    damaged = set(eff)
    v_nom = f.v_nom if v_nom is None else v_nom
    for k in range(K + 1):
        for ln in f.lines:
            e, i, j = ln.id, ln.i, ln.j
            P, Q = v["P", (e, k, s)], v["Q", (e, k, s)]
            kids = f.child_lines(j)
            m.add_row([(P, 1.0)] + [(v["P", (l, k, s)], -1.0) for l in kids] + [(v["pt", (j, k, s)], -1.0)],
                      EQ, 0.0, f"balance_p[{e},{k},{s}]")
            m.add_row([(Q, 1.0)] + [(v["Q", (l, k, s)], -1.0) for l in kids] + [(v["qt", (j, k, s)], -1.0)],
                      EQ, 0.0, f"balance_q[{e},{k},{s}]")
            drop = [(v["nu", (j, k, s)], 1.0), (v["nu", (i, k, s)], -1.0), (P, 2.0 * ln.r), (Q, 2.0 * ln.x)]
            if e in damaged:
                kl = v["kline", (e, k, s)]
                m.add_row([(P, 1.0), (kl, bm["flow_p"])], LE, bm["flow_p"], f"cut_p_hi[{e},{k},{s}]")
                m.add_row([(P, -1.0), (kl, bm["flow_p"])], LE, bm["flow_p"], f"cut_p_lo[{e},{k},{s}]")
                m.add_row([(Q, 1.0), (kl, bm["flow_q"])], LE, bm["flow_q"], f"cut_q_hi[{e},{k},{s}]")
                m.add_row([(Q, -1.0), (kl, bm["flow_q"])], LE, bm["flow_q"], f"cut_q_lo[{e},{k},{s}]")
                L = bm["voltage"]
                m.add_row(drop + [(kl, -L)], LE, 0.0, f"vdrop_hi[{e},{k},{s}]")
                m.add_row([(c, -a) for c, a in drop] + [(kl, -L)], LE, 0.0, f"vdrop_lo[{e},{k},{s}]")
            else:
                m.add_row(drop, EQ, 0.0, f"vdrop[{e},{k},{s}]")
    m.add_row([(v["nu", (f.substation, K, s)], 1.0)], EQ, v_nom, f"grid_voltage[{s}]")


def add_objective(m: MipModel, f: Feeder, scenarios, K: int, include_siting: bool = True):
    v = m.vars
    w = 1.0 / len(scenarios)
    if include_siting:
        for i in f.sites:
            m.add_obj(v["ysc", (i,)], f.node(i).c_sd)
    const = 0.0
    for s in range(len(scenarios)):
        for k in range(K + 1):
            for n in f.nodes:
                const += w * n.c_lc
                m.add_obj(v["lcc", (n.name, k, s)], -w * n.c_lc)
                m.add_obj(v["kcc", (n.name, k, s)], w * n.c_ls)
    m.obj_const += const


# ---------------------------------------------------------------------------
# model assembly

def _base_model(f, der, scenarios, limits, K, big_m_scale, warn=True):
    if not scenarios:
        raise InputError("at least one scenario is required")
    n_e = len(f.lines)
    for s in scenarios:
        if len(s) != n_e:
            raise InputError(f"scenario has {len(s)} entries for {n_e} lines")
    if K is None:
        K = limits.K if limits.K is not None else horizon_K(f, scenarios, limits.Y)
    need = horizon_K(f, scenarios, limits.Y)
    if K < need and warn:
        log.warning("horizon K=%d is shorter than the %d periods needed to fit all repairs", K, need)
    m = MipModel()
    m.big_m.update(big_m_values(f, big_m_scale))
    m.meta.update({"K": K, "G": limits.G, "Y": limits.Y, "S": len(scenarios),
                   "scenarios": [s.bits for s in scenarios], "edges": list(f.edge_ids),
                   "nodes": list(f.node_names), "sites": list(f.sites), "n_der": der.count})
    return m, K


def build_saa_mip(f: Feeder, der: DerSpec, scenarios, limits: ResourceLimits, K: int | None = None,
                  big_m_scale: float = 1.0, fixed: Allocation | None = None) -> MipModel:
    """Full SAA model over ``scenarios`` sharing the stage-I columns.

    ``fixed`` pins the stage-I columns to a given allocation (used by the
    per-scenario evaluation and by forced-site experiments).
    """
    scenarios = list(scenarios)
    m, K = _base_model(f, der, scenarios, limits, K, big_m_scale)
    _register_stage1(m, f, der, fixed)
    effs = [_register_scenario(m, f, der, s, sc, K) for s, sc in enumerate(scenarios)]
    m.meta["effective_failures"] = effs
    add_placement_constraints(m, f, der, limits)
    for s, eff in enumerate(effs):
        add_repair_constraints(m, f, s, eff, limits, K)
        add_dispatch_constraints(m, f, der, s, K)
        add_powerflow_constraints(m, f, s, eff, K)
    add_objective(m, f, scenarios, K)
    return m


def check_allocation(f: Feeder, der: DerSpec, a: Allocation, G: int):
    problems = []
    for i in f.sites:
        n = a.ders_at(i)
        y = a.ysc.get(i, 0)
        if y > n:
            problems.append(f"site {i} developed without a DER")
        if n > y * der.count:
            problems.append(f"DERs placed at undeveloped site {i}")
    for d in range(der.count):
        if sum(a.ygc.get((i, d), 0) for i in f.sites) > 1:
            problems.append(f"DER {d} placed at more than one site")
    if a.n_ders > G:
        problems.append(f"{a.n_ders} DERs exceed the budget G={G}")
    extra = set(a.ysc) - set(f.sites)
    if extra:
        problems.append(f"allocation names non-candidate sites {sorted(extra)}")
    if problems:
        raise InputError("infeasible allocation: " + "; ".join(problems))


def build_second_stage(a: Allocation, f: Feeder, der: DerSpec, scenario: FailureScenario,
                       limits: ResourceLimits, K: int | None = None, big_m_scale: float = 1.0) -> MipModel:
    """Recourse model for one scenario with the stage-I decision held fixed.

    The objective omits the site-development cost.
    """
    check_allocation(f, der, a, limits.G)
    m, K = _base_model(f, der, [scenario], limits, K, big_m_scale)
    _register_stage1(m, f, der, a)
    eff = _register_scenario(m, f, der, 0, scenario, K)
    m.meta["effective_failures"] = [eff]
    add_repair_constraints(m, f, 0, eff, limits, K)
    add_dispatch_constraints(m, f, der, 0, K)
    add_powerflow_constraints(m, f, 0, eff, K)
    add_objective(m, f, [scenario], K, include_siting=False)
    return m


# ---------------------------------------------------------------------------
# reading solutions

def allocation_from(m: MipModel, x, f: Feeder, der: DerSpec) -> Allocation:
    v = m.vars
    ysc = {i: int(round(x[v["ysc", (i,)]])) for i in f.sites}
    ygc = {(i, d): int(round(x[v["ygc", (i, d)]])) for i in f.sites for d in range(der.count)}
    return Allocation(ysc, ygc)


def scenario_trajectory(m: MipModel, x, f: Feeder, der: DerSpec, s: int) -> dict:
    """Per-period repair and dispatch values of scenario ``s`` from a solution vector."""
    v = m.vars
    K = m.meta["K"]
    eff = m.meta["effective_failures"][s]
    out = {"K": K, "effective_failures": list(eff), "periods": []}
    for k in range(K + 1):
        per = {
            "k": k,
            "repaired": [e for e in eff if x[v["yline", (e, k, s)]] > 0.5],
            "kline": {e: (int(round(x[v["kline", (e, k, s)]])) if e in eff else 0) for e in f.edge_ids},
            "lcc": {n: float(x[v["lcc", (n, k, s)]]) for n in f.node_names},
            "kcc": {n: int(round(x[v["kcc", (n, k, s)]])) for n in f.node_names},
            "pc": {n: float(x[v["pc", (n, k, s)]]) for n in f.node_names},
            "qc": {n: float(x[v["qc", (n, k, s)]]) for n in f.node_names},
            "pt": {n: float(x[v["pt", (n, k, s)]]) for n in f.node_names},
            "qt": {n: float(x[v["qt", (n, k, s)]]) for n in f.node_names},
            "nu": {n: float(x[v["nu", (n, k, s)]]) for n in [f.substation] + f.node_names},
            "P": {e: float(x[v["P", (e, k, s)]]) for e in f.edge_ids},
            "Q": {e: float(x[v["Q", (e, k, s)]]) for e in f.edge_ids},
            "pg": {(i, d): float(x[v["pg", (i, d, k, s)]]) for i in f.sites for d in range(der.count)},
            "qg": {(i, d): float(x[v["qg", (i, d, k, s)]]) for i in f.sites for d in range(der.count)},
        }
        out["periods"].append(per)
    return out


def period_cost(f: Feeder, period: dict) -> float:
    """Load-control plus shedding cost of one period of a trajectory."""
    return sum(n.c_lc * (1.0 - period["lcc"][n.name]) + n.c_ls * period["kcc"][n.name] for n in f.nodes)
