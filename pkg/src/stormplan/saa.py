"""End-to-end planning pipeline and the metrics computed from its results.

wind field -> line failure probabilities -> scenario selection -> SAA solve
-> per-period system performance, resilience curves, failure statistics.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decomposed import BlockCache, solve_decomposed
from .errors import InfeasibleModelError, InputError, SolverLimitError, StormPlanError
from .failures import (FailureScenario, NhppParams, cell_intensities, line_intensities, make_rng,
                       sample_bits, select_scenarios)
from .mip.bnb import (STATUS_INFEASIBLE, STATUS_OPTIMAL, STATUS_UNBOUNDED, MipOptions, BranchAndBound)
from .mip.diagnose import first_violated_family
from .network import DerSpec, Feeder, edge_cell_lengths, islands
from .stage2 import (Allocation, ResourceLimits, allocation_from, build_saa_mip, build_second_stage, check_allocation,
                     horizon_K, period_cost, scenario_trajectory)
from .wind import Grid, StormTrack, hourly_wind_table

log = logging.getLogger(__name__)

METHODS = ("decomposed", "bnb", "highs")


@dataclass
class SolverOptions:
    """How the SAA model is solved.

    ``decomposed`` enumerates allocations and repair schedules and solves the
    per-period dispatch blocks with the embedded branch and bound; ``bnb``
    hands the whole model to the embedded branch and bound in one call;
    ``highs`` hands it to HiGHS (optional dependency).
    """

    method: str = "decomposed"
    rel_gap: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int | None = None
    time_limit: float | None = None
    branching: str = "most-fractional"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown solve method {self.method!r}; choose from {METHODS}")

    def mip_options(self) -> MipOptions:
        return MipOptions(int_tol=self.int_tol, rel_gap=self.rel_gap, node_limit=self.node_limit,
                          time_limit=self.time_limit, branching=self.branching)

    def block_options(self) -> dict:
        return {"int_tol": self.int_tol, "rel_gap": self.rel_gap, "branching": self.branching}


@dataclass
class SaaSolution:
    allocation: Allocation
    scenarios: list
    limits: ResourceLimits
    K: int
    objective: float                 # SAA objective g-hat
    siting_cost: float
    J: list                          # per-scenario second-stage cost
    trajectories: list
    status: str = STATUS_OPTIMAL
    bound: float = math.nan
    solver: dict = field(default_factory=dict)
    x: np.ndarray | None = None
    model: object = None
    probabilities: dict | None = None
    seed: int | None = None

    @property
    def S(self) -> int:
        return len(self.scenarios)

    def decomposition_residual(self) -> float:
        """|g-hat - (siting + mean J)|; zero up to rounding for a consistent solution."""
        return abs(self.objective - (self.siting_cost + sum(self.J) / self.S))

    def schedules(self) -> list:
        return [[p["repaired"] for p in tr["periods"]] for tr in self.trajectories]


@dataclass
class ResilienceSeries:
    k: list
    performance: list
    meta: dict = field(default_factory=dict)


@dataclass
class SecondStageResult:
    J: float
    trajectory: dict
    status: str


# ---------------------------------------------------------------------------
# failure probabilities and scenarios

def failure_probabilities(f: Feeder, track: StormTrack, grid: Grid, nhpp: NhppParams = NhppParams()) -> dict:
    """``{edge id: LineIntensity}`` for every line of the feeder."""
    hours, cell_ids, speeds = hourly_wind_table(track, grid)
    # one rate per hour interval [t, t+1): drop the closing instant t2
    if len(hours) > 1:
        speeds = speeds[:-1]
    cells = cell_intensities(cell_ids, speeds, nhpp)
    lengths = edge_cell_lengths(f, grid)
    return {li.edge: li for li in line_intensities(f.edge_ids, lengths, cells)}


def probability_vector(f: Feeder, intensities: dict) -> np.ndarray:
    return np.array([intensities[e].p_e for e in f.edge_ids])


# ---------------------------------------------------------------------------
# solving

def _status_error(status, what="SAA model", model=None):
    if status == STATUS_INFEASIBLE and model is not None:
        fam = first_violated_family(model)
        where = f"; first violated family: {fam}" if fam else "; variable bounds conflict"
        return InfeasibleModelError(f"{what} is infeasible{where}")
    if status in (STATUS_INFEASIBLE, STATUS_UNBOUNDED):
        return InfeasibleModelError(f"{what} is {status}")
    return SolverLimitError(f"{what}: solver stopped with status {status} and no incumbent")


def solve_saa(f: Feeder, der: DerSpec, scenarios, limits: ResourceLimits, K: int | None = None,
              options: SolverOptions | None = None, fixed: Allocation | None = None,
              cache: BlockCache | None = None, big_m_scale: float = 1.0) -> SaaSolution:
    """Solve the SAA problem over ``scenarios``; ``fixed`` pins the stage-I decision."""
    options = options or SolverOptions()
    scenarios = list(scenarios)
    if not scenarios:
        raise InputError("at least one scenario is required")
    if K is None:
        K = limits.K if limits.K is not None else horizon_K(f, scenarios, limits.Y)
    if fixed is not None:
        check_allocation(f, der, fixed, limits.G)
    t0 = time.perf_counter()
    if options.method == "decomposed":
        cache = cache or BlockCache(f, der, big_m_scale, options.block_options())
        try:
            d = solve_decomposed(f, der, scenarios, limits, K=K, big_m_scale=big_m_scale, fixed=fixed, cache=cache)
        except InfeasibleModelError:
            m = build_saa_mip(f, der, scenarios, limits, K=K, big_m_scale=big_m_scale, fixed=fixed)
            raise _status_error(STATUS_INFEASIBLE, model=m) from None
        m, x = d.model, d.x
        status, bound = STATUS_OPTIMAL, d.objective
        solver = {"method": "decomposed", "allocations": d.stats.allocations, "blocks": d.stats.blocks,
                  "block_nodes": d.stats.block_nodes}
    else:
        m = build_saa_mip(f, der, scenarios, limits, K=K, big_m_scale=big_m_scale, fixed=fixed)
        if options.method == "bnb":
            sol = BranchAndBound(m, options.mip_options()).solve()
        else:
            from .mip.external import solve_highs
            sol = solve_highs(m, rel_gap=options.rel_gap, time_limit=options.time_limit,
                              node_limit=options.node_limit)
        if sol.x is None:
            raise _status_error(sol.status, model=m)
        x, status, bound = sol.x, sol.status, sol.bound
        solver = {"method": options.method, "nodes": sol.nodes, "gap": sol.gap,
                  "lp_iterations": sol.lp_iterations, "log": list(sol.log)}
    solver["wall_time"] = time.perf_counter() - t0
    solver["stats"] = m.stats()
    a = allocation_from(m, x, f, der)
    trajs = [scenario_trajectory(m, x, f, der, s) for s in range(len(scenarios))]
    J = [sum(period_cost(f, p) for p in tr["periods"]) for tr in trajs]
    siting = sum(f.node(i).c_sd * a.ysc[i] for i in f.sites)
    return SaaSolution(a, scenarios, limits, K, m.objective_value(x), siting, J, trajs, status=status,
                       bound=bound, solver=solver, x=x, model=m)


def evaluate_second_stage(a: Allocation, f: Feeder, der: DerSpec, scenario: FailureScenario,
                          limits: ResourceLimits, K: int | None = None,
                          options: SolverOptions | None = None, cache: BlockCache | None = None) -> SecondStageResult:
    """Optimal recourse cost J(a, s) and its trajectory for a fixed allocation."""
    options = options or SolverOptions()
    if K is None:
        K = limits.K if limits.K is not None else horizon_K(f, [scenario], limits.Y)
    if options.method == "decomposed":
        sol = solve_saa(f, der, [scenario], limits, K=K, options=options, fixed=a, cache=cache)
        return SecondStageResult(sol.J[0], sol.trajectories[0], sol.status)
    m = build_second_stage(a, f, der, scenario, limits, K=K)
    if options.method == "bnb":
        res = BranchAndBound(m, options.mip_options()).solve()
    else:
        from .mip.external import solve_highs
        res = solve_highs(m, rel_gap=options.rel_gap, time_limit=options.time_limit)
    if res.x is None:
        raise _status_error(res.status, "second-stage model", m)
    traj = scenario_trajectory(m, res.x, f, der, 0)
    return SecondStageResult(res.objective, traj, res.status)


# ---------------------------------------------------------------------------
# metrics

def full_shed_cost(f: Feeder) -> float:
    return sum(n.c_lc + n.c_ls for n in f.nodes)


def system_performance(f: Feeder, trajectories, k: int) -> float:
    """Average over scenarios of 100 (1 - c_k / C_full) at period ``k``."""
    if not trajectories:
        raise StormPlanError("no solved scenarios to evaluate")
    c_full = full_shed_cost(f)
    if c_full <= 0:
        raise InputError("feeder has no load costs; performance is undefined")
    vals = []
    for tr in trajectories:
        if k >= len(tr["periods"]):
            raise InputError(f"period {k} beyond the horizon")
        vals.append(100.0 * (1.0 - period_cost(f, tr["periods"][k]) / c_full))
    return float(np.mean(vals))


def total_cost_performance(f: Feeder, J) -> float:
    """The alternative reading of the metric: 100 (1 - J_s / sum_i C^LS_i) averaged over scenarios.

    Not bounded to [0, 100] once the horizon has more than one period.
    """
    c_ls = sum(n.c_ls for n in f.nodes)
    if c_ls <= 0:
        raise InputError("feeder has no shedding costs")
    return float(np.mean([100.0 * (1.0 - j / c_ls) for j in J]))


def resilience_curve(f: Feeder, trajectories, meta=None) -> ResilienceSeries:
    K = len(trajectories[0]["periods"]) - 1
    ks = list(range(K + 1))
    return ResilienceSeries(ks, [system_performance(f, trajectories, k) for k in ks], dict(meta or {}))


def curve_of(f: Feeder, sol: SaaSolution, **meta) -> ResilienceSeries:
    info = {"G": sol.limits.G, "Y": sol.limits.Y, "K": sol.K, "seed": sol.seed}
    info.update(meta)
    return resilience_curve(f, sol.trajectories, info)


def per_scenario_curve(f: Feeder, der: DerSpec, scenarios, limits: ResourceLimits, K: int | None = None,
                       options: SolverOptions | None = None, cache: BlockCache | None = None,
                       meta=None) -> ResilienceSeries:
    """Performance when every scenario gets its own optimal allocation (one deterministic problem each)."""
    options = options or SolverOptions()
    scenarios = list(scenarios)
    if K is None:
        K = limits.K if limits.K is not None else horizon_K(f, scenarios, limits.Y)
    if options.method == "decomposed" and cache is None:
        cache = BlockCache(f, der, 1.0, options.block_options())
    trajs = [solve_saa(f, der, [s], limits, K=K, options=options, cache=cache).trajectories[0] for s in scenarios]
    info = {"G": limits.G, "Y": limits.Y, "K": K, "per_scenario_a": True}
    info.update(meta or {})
    return resilience_curve(f, trajs, info)


@dataclass
class FailureReport:
    p_mean: float
    p_min: float
    p_max: float
    n_samples: int
    failures: np.ndarray          # failed lines per sample
    island_counts: np.ndarray     # islands per sample
    island_sizes: list            # node count of every island of every sample
    seed: int | None = None

    @property
    def mean_failures(self) -> float:
        return float(self.failures.mean())

    @property
    def median_island_size(self) -> float:
        return float(statistics.median(self.island_sizes)) if self.island_sizes else math.nan

    @property
    def min_island_size(self) -> int:
        return min(self.island_sizes) if self.island_sizes else 0

    @property
    def max_island_size(self) -> int:
        return max(self.island_sizes) if self.island_sizes else 0

    def failure_histogram(self, n_lines: int) -> np.ndarray:
        """Empirical probability of 0..n_lines failures."""
        return np.bincount(self.failures, minlength=n_lines + 1)[: n_lines + 1] / self.n_samples

    def island_size_histogram(self, n_nodes: int) -> np.ndarray:
        counts = np.bincount(np.asarray(self.island_sizes, dtype=int), minlength=n_nodes + 1)[: n_nodes + 1]
        total = counts.sum()
        return counts / total if total else counts.astype(float)


def failure_statistics(f: Feeder, p, n_samples: int, rng: np.random.Generator, seed=None) -> FailureReport:
    """Sample ``n_samples`` failure scenarios and summarise failures and islands."""
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    p = np.asarray(p, dtype=float)
    bits = sample_bits(p, rng, n_samples)
    edges = f.edge_ids
    failures = bits.sum(axis=1).astype(int)
    counts, sizes = [], []
    memo = {}
    for row in bits:
        key = row.tobytes()
        if key not in memo:
            memo[key] = [len(c) for c in islands(f, [e for e, b in zip(edges, row) if b])]
        isl = memo[key]
        counts.append(len(isl))
        sizes.extend(isl)
    return FailureReport(float(p.mean()), float(p.min()), float(p.max()), n_samples, failures,
                         np.array(counts), sizes, seed)


# ---------------------------------------------------------------------------
# pipeline and sweeps

@dataclass
class SamplingOptions:
    n_samples: int = 1000
    top: int = 100
    subset_size: int = 10
    seed: int = 0


def run_pipeline(f: Feeder, der: DerSpec, track: StormTrack, grid: Grid, limits: ResourceLimits,
                 nhpp: NhppParams = NhppParams(), sampling: SamplingOptions | None = None,
                 options: SolverOptions | None = None, fixed: Allocation | None = None) -> SaaSolution:
    sampling = sampling or SamplingOptions()
    intens = failure_probabilities(f, track, grid, nhpp)
    p = probability_vector(f, intens)
    rng = make_rng(sampling.seed)
    scenarios = select_scenarios(p, rng, sampling.n_samples, sampling.top, sampling.subset_size)
    sol = solve_saa(f, der, scenarios, limits, options=options, fixed=fixed)
    sol.probabilities = {e: intens[e].p_e for e in f.edge_ids}
    sol.seed = sampling.seed
    return sol


def _sweep_cell(args):
    f, der, scenarios, G, Y, K, options = args
    return (G, Y), solve_saa(f, der, scenarios, ResourceLimits(G, Y), K=K, options=options)


def sweep(f: Feeder, der: DerSpec, scenarios, cells, K: int | None = None,
          options: SolverOptions | None = None, workers: int = 1) -> dict:
    """Solve the SAA problem for every ``(G, Y)`` in ``cells`` with a common horizon.

    ``K`` defaults to the horizon of the smallest ``Y`` so every cell is
    solved over the same periods.
    """
    options = options or SolverOptions()
    cells = list(cells)
    scenarios = list(scenarios)
    if K is None:
        K = horizon_K(f, scenarios, min(Y for _, Y in cells))
    out = {}
    if workers <= 1:
        cache = BlockCache(f, der, 1.0, options.block_options()) if options.method == "decomposed" else None
        for G, Y in cells:
            out[(G, Y)] = solve_saa(f, der, scenarios, ResourceLimits(G, Y), K=K, options=options, cache=cache)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for key, sol in pool.map(_sweep_cell, [(f, der, scenarios, G, Y, K, options) for G, Y in cells]):
            out[key] = sol
    return out


# ---------------------------------------------------------------------------
# results bundle

def _schedule_rows(f: Feeder, tr: dict):
    rows = []
    for p in tr["periods"]:
        for e in tr["effective_failures"]:
            rows.append((p["k"], e, p["kline"][e], int(e in p["repaired"])))
    return rows


def _dispatch_rows(f: Feeder, der: DerSpec, tr: dict):
    rows = []
    for p in tr["periods"]:
        k = p["k"]
        for n in [f.substation] + f.node_names:
            rows.append((k, "node", n, "nu", p["nu"][n]))
            if n == f.substation:
                continue
            for q in ("pc", "qc", "lcc", "kcc", "pt", "qt"):
                rows.append((k, "node", n, q, float(p[q][n])))
        for e in f.edge_ids:
            rows.append((k, "edge", e, "kline", p["kline"][e]))
            rows.append((k, "edge", e, "P", p["P"][e]))
            rows.append((k, "edge", e, "Q", p["Q"][e]))
        for (i, d), v in p["pg"].items():
            rows.append((k, "der", f"{i}/{d}", "pg", v))
            rows.append((k, "der", f"{i}/{d}", "qg", p["qg"][(i, d)]))
        rows.append((k, "period", "", "cost", period_cost(f, p)))
    return rows


def write_bundle(out_dir, f: Feeder, der: DerSpec, sol: SaaSolution, curves=(), report=None, prefix=""):
    """Write allocation, per-scenario schedule and dispatch tables, curve(s) and the run report."""
    from .fileio import write_csv, write_document
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a = sol.allocation
    write_csv(out / f"{prefix}allocation.csv", ["site", "developed", "ders", "der_ids"],
              [(i, a.ysc[i], a.ders_at(i), ";".join(str(d) for (j, d), v in sorted(a.ygc.items()) if j == i and v))
               for i in f.sites])
    for s, tr in enumerate(sol.trajectories):
        write_csv(out / f"{prefix}schedule_{s}.csv", ["k", "line", "kline", "repaired"], _schedule_rows(f, tr))
        write_csv(out / f"{prefix}dispatch_{s}.csv", ["k", "element", "id", "quantity", "value"],
                  _dispatch_rows(f, der, tr))
    curves = list(curves) or [curve_of(f, sol)]
    rows = []
    for c in curves:
        label = c.meta.get("label", "saa")
        rows.extend((label, c.meta.get("G"), c.meta.get("Y"), k, v) for k, v in zip(c.k, c.performance))
    write_csv(out / f"{prefix}curve.csv", ["curve", "G", "Y", "k", "performance"], rows)
    doc = {
        "objective": sol.objective,
        "siting_cost": sol.siting_cost,
        "J": list(sol.J),
        "K": sol.K,
        "limits": {"G": sol.limits.G, "Y": sol.limits.Y},
        "seed": sol.seed,
        "status": sol.status,
        "scenarios": [{"failed": s.failed(f.edge_ids), "prob": s.prob} for s in sol.scenarios],
        "solver": {k: v for k, v in sol.solver.items() if k != "log"},
    }
    if sol.probabilities is not None:
        doc["p"] = sol.probabilities
    doc.update(report or {})
    write_document(out / f"{prefix}report.json", doc)
    return out
