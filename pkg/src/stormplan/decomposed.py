"""Exact structured solve of the SAA model.

Once the stage-I allocation and a scenario's repair schedule are fixed, the
SAA model falls apart into one small dispatch MIP per (scenario, period).
Each of those depends only on

* the allocation,
* the set of lines still out of service in that period, and
* the period kind: ``start`` (k = 0), ``mid`` (droop rows apply) or ``end``
  (k = K, grid reconnected).

So the optimum is found by enumerating allocations, running a dynamic
program over repair schedules for every scenario, and solving each distinct
dispatch block once with the embedded branch and bound.  The assembled
solution vector is then checked row by row against the monolithic model,
and its objective must match the decomposed value.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleModelError, NumericalError, SolverLimitError
from .failures import FailureScenario
from .mip.bnb import STATUS_OPTIMAL, solve_mip
from .network import DerSpec, Feeder
from .stage2 import (Allocation, ResourceLimits, _base_model, _register_scenario, _register_stage1,
                     add_dispatch_constraints, add_powerflow_constraints, add_repair_constraints,
                     build_saa_mip, effective_failures, horizon_K, period_cost)

log = logging.getLogger(__name__)

START, MID, END = "start", "mid", "end"
_TEMPLATE_K = {START: 0, MID: 1, END: 2}


def enumerate_allocations(f: Feeder, der: DerSpec, G: int) -> list:
    """Every stage-I decision allowed by the placement rows, DERs filled in index order.

    Ordered by number of DERs, then lexicographically over the site list.
    """
    sites = f.sites
    budget = min(G, der.count)
    out = []
    for total in range(budget + 1):
        for counts in itertools.product(range(total + 1), repeat=len(sites)):
            if sum(counts) != total:
                continue
            out.append(Allocation.place(f, der, {s: n for s, n in zip(sites, counts) if n}))
    out.sort(key=lambda a: (a.n_ders, [-a.ders_at(s) for s in sites]))
    return out


def _alloc_key(a: Allocation):
    return tuple(sorted(a.ygc.items()))


def period_kind(k: int, K: int) -> str:
    if k == 0:
        return START
    return END if k == K else MID


@dataclass
class BlockResult:
    cost: float
    values: dict          # (family, index without (k, s)) -> value
    nodes: int


@dataclass
class DecomposedStats:
    blocks: int = 0
    block_nodes: int = 0
    block_time: float = 0.0
    allocations: int = 0


class BlockCache:
    """Memoised per-period dispatch optima keyed by (allocation, lines down, period kind)."""

    def __init__(self, f: Feeder, der: DerSpec, big_m_scale: float = 1.0, solver_opts=None):
        self.f, self.der = f, der
        self.big_m_scale = big_m_scale
        self.solver_opts = dict(solver_opts or {})
        self._memo = {}
        self.stats = DecomposedStats()

    def value(self, a: Allocation, down: frozenset, kind: str) -> BlockResult:
        key = (_alloc_key(a), down, kind)
        hit = self._memo.get(key)
        if hit is None:
            hit = self._solve(a, down, kind)
            self._memo[key] = hit
        return hit

    def _solve(self, a, down, kind) -> BlockResult:
        f, der = self.f, self.der
        sub = f.substation_edge
        failed = [e for e in f.edge_ids if e in down and e != sub]
        scenario = FailureScenario.from_failed(f.edge_ids, failed)
        limits = ResourceLimits(G=max(a.n_ders, 0), Y=max(1, len(f.lines)))
        # three-period template: k = 0, 1, 2 stand for start, mid and end periods
        m, K = _base_model(f, der, [scenario], limits, 2, self.big_m_scale, warn=False)
        _register_stage1(m, f, der, a)
        eff = _register_scenario(m, f, der, 0, scenario, K)
        add_dispatch_constraints(m, f, der, 0, K)
        add_powerflow_constraints(m, f, 0, eff, K)
        t = _TEMPLATE_K[kind]
        cols = []
        for j in range(m.n_cols):
            fam, idx = m.vars.key(j)
            if fam in ("ysc", "ygc"):
                cols.append(j)
            elif fam != "yline" and idx[-2] == t:
                cols.append(j)
        block = m.submodel(cols)
        for j in range(block.n_cols):
            fam, idx = block.vars.key(j)
            if fam == "kline":
                block.fix(j, 1.0 if (idx[0] in down and not (kind == END and idx[0] == sub)) else 0.0)
        # per-period load-control and shedding cost only
        block.obj = [0.0] * block.n_cols
        for n in f.nodes:
            block.add_obj(block.vars["lcc", (n.name, t, 0)], -n.c_lc)
            block.add_obj(block.vars["kcc", (n.name, t, 0)], n.c_ls)
        block.obj_const = sum(n.c_lc for n in f.nodes)
        t0 = time.perf_counter()
        sol = solve_mip(block, **self.solver_opts)
        self.stats.blocks += 1
        self.stats.block_nodes += sol.nodes
        self.stats.block_time += time.perf_counter() - t0
        if sol.status != STATUS_OPTIMAL:
            if sol.status == "infeasible":
                return BlockResult(math.inf, {}, sol.nodes)
            raise SolverLimitError(f"dispatch block ({kind}, down={sorted(down)}) stopped with {sol.status}")
        values = {}
        for j in range(block.n_cols):
            fam, idx = block.vars.key(j)
            if fam in ("ysc", "ygc", "kline"):
                continue
            values[(fam, idx[:-2])] = float(sol.x[j])
        return BlockResult(sol.objective, values, sol.nodes)


@dataclass
class ScheduleResult:
    J: float
    repairs: list         # repairs[k] = list of lines repaired in period k
    down: list            # down[k] = frozenset of lines out of service in period k


def best_schedule(f: Feeder, a: Allocation, scenario: FailureScenario, Y: int, K: int,
                  cache: BlockCache) -> ScheduleResult:
    """Dynamic program over repair schedules of one scenario for a fixed allocation."""
    eff = effective_failures(f, scenario)
    sub = f.substation_edge
    others = [e for e in eff if e != sub]
    n = len(others)

    def down_set(mask, kind):
        d = {others[i] for i in range(n) if not mask >> i & 1}
        if kind != END:
            d.add(sub)
        return frozenset(d)

    def cost(mask, kind):
        return cache.value(a, down_set(mask, kind), kind).cost

    # subsets of the unrepaired lines with at most `cap` members, in increasing mask order
    def additions(mask, cap):
        free = [i for i in range(n) if not mask >> i & 1]
        out = [0]
        for r in range(1, min(cap, len(free)) + 1):
            for combo in itertools.combinations(free, r):
                out.append(sum(1 << i for i in combo))
        return sorted(out)

    best = {0: cost(0, START)}
    back = [{0: None}]
    for k in range(1, K + 1):
        kind = period_kind(k, K)
        cap = Y - 1 if kind == END else Y
        nxt, prev = {}, {}
        for mask in sorted(best):
            base = best[mask]
            if not math.isfinite(base):
                continue
            for add in additions(mask, cap):
                new = mask | add
                c = base + cost(new, kind)
                if new not in nxt or c < nxt[new] - 1e-9:
                    nxt[new], prev[new] = c, mask
        best = nxt
        back.append(prev)
    if not best:
        raise InfeasibleModelError("no repair schedule fits the horizon")
    final = min(sorted(best), key=lambda mk: best[mk])
    J = best[final]
    masks = [final]
    for k in range(K, 0, -1):
        masks.append(back[k][masks[-1]])
    masks.reverse()
    repairs, down = [[]], [down_set(0, START)]
    for k in range(1, K + 1):
        added = masks[k] & ~masks[k - 1]
        rep = [others[i] for i in range(n) if added >> i & 1]
        if k == K:
            rep.append(sub)
        repairs.append(sorted(rep, key=eff.index))
        down.append(down_set(masks[k], period_kind(k, K)))
    return ScheduleResult(J, repairs, down)


@dataclass
class DecomposedSolution:
    allocation: Allocation
    objective: float
    siting_cost: float
    J: list
    schedules: list
    x: np.ndarray
    model: object
    stats: DecomposedStats
    candidates: list = field(default_factory=list)   # (objective, allocation) per enumerated allocation


def solve_decomposed(f: Feeder, der: DerSpec, scenarios, limits: ResourceLimits, K: int | None = None,
                     big_m_scale: float = 1.0, fixed: Allocation | None = None, cache: BlockCache | None = None,
                     solver_opts=None, check_tol: float = 1e-6) -> DecomposedSolution:
    """Optimal SAA solution by allocation enumeration, schedule DP and per-period block MIPs."""
    scenarios = list(scenarios)
    if K is None:
        K = limits.K if limits.K is not None else horizon_K(f, scenarios, limits.Y)
    cache = cache or BlockCache(f, der, big_m_scale, solver_opts)
    allocs = [fixed] if fixed is not None else enumerate_allocations(f, der, limits.G)
    S = len(scenarios)
    best = None
    candidates = []
    for a in allocs:
        siting = sum(f.node(i).c_sd * a.ysc[i] for i in f.sites)
        scheds = [best_schedule(f, a, s, limits.Y, K, cache) for s in scenarios]
        total = siting + sum(r.J for r in scheds) / S
        candidates.append((total, a))
        if best is None or total < best[0] - 1e-9 * max(1.0, abs(total)):
            best = (total, a, siting, scheds)
        cache.stats.allocations += 1
    total, a, siting, scheds = best
    m = build_saa_mip(f, der, scenarios, limits, K=K, big_m_scale=big_m_scale, fixed=fixed)
    x = assemble_solution(m, f, der, a, scheds, cache, K)
    viol = m.max_violation(x)
    obj = m.objective_value(x)
    if viol > check_tol or abs(obj - total) > check_tol * max(1.0, abs(total)):
        raise NumericalError(f"assembled solution fails the monolithic check (violation {viol:.3g}, "
                             f"objective {obj:.12g} vs {total:.12g})")
    return DecomposedSolution(a, total, siting, [r.J for r in scheds], scheds, x, m, cache.stats, candidates)


def assemble_solution(m, f: Feeder, der: DerSpec, a: Allocation, scheds, cache: BlockCache, K: int) -> np.ndarray:
    """Column vector of the monolithic model built from the decomposed pieces."""
    x = np.zeros(m.n_cols)
    v = m.vars
    for i in f.sites:
        x[v["ysc", (i,)]] = a.ysc[i]
        for d in range(der.count):
            x[v["ygc", (i, d)]] = a.ygc[(i, d)]
    effs = m.meta["effective_failures"]
    for s, r in enumerate(scheds):
        for e in effs[s]:
            done = False
            for k in range(K + 1):
                rep = e in r.repairs[k]
                x[v["yline", (e, k, s)]] = 1.0 if rep else 0.0
                done = done or rep
                x[v["kline", (e, k, s)]] = 0.0 if done else 1.0
        for k in range(K + 1):
            kind = period_kind(k, K)
            blk = cache.value(a, r.down[k], kind)
            for (fam, idx), val in blk.values.items():
                x[v[fam, idx + (k, s)]] = val
    return x


def schedule_cost(f: Feeder, trajectory: dict) -> float:
    return sum(period_cost(f, p) for p in trajectory["periods"])
