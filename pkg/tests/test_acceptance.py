"""Acceptance criteria 1-8, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (shown even
without ``-s``) and then asserts. Run directly with
``python tests/test_acceptance.py`` or through pytest.
"""

import itertools
import logging
import math
import sys
import time
from importlib.resources import files

import numpy as np
import pytest

from oracles import chain3_optimum
from stormplan.failures import (FailureScenario, NhppParams, make_rng, poisson_rate, sample_bits,
                                scenario_probability, select_scenarios)
from stormplan.fileio import load_feeder, load_scenario_set
from stormplan.fixtures import der3, der12, feeder3, feeder12, grid12, track1, track2
from stormplan.mip import solve_mip
from stormplan.mip.external import highs_available, solve_lp_file
from stormplan.mip.lpfile import export_lp_file
from stormplan.network import islands
from stormplan.saa import (curve_of, failure_probabilities, failure_statistics, probability_vector, solve_saa,
                           sweep)
from stormplan.stage2 import Allocation, ResourceLimits, build_saa_mip, horizon_K

DATA = files("stormplan") / "data"
TOL = 1e-7

# every SAA solution produced here, for the whole-run checks of criteria 5 and 8
SOLVED = []


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


# ---------------------------------------------------------------------------

def test_criterion_1_nhpp_rate(report):
    t0 = time.perf_counter()
    p = NhppParams()
    below = np.linspace(0.0, p.v_crit, 50, endpoint=False)
    above = np.array([p.v_crit + 1e-9, 25.0, 33.0, 45.0, 70.0])
    got_below = poisson_rate(below)
    got_above = poisson_rate(above)
    want_above = [3.5e-5 * (1 + 4175.6 * ((v / 20.6) ** 2 - 1)) for v in above]
    err_below = float(np.max(np.abs(got_below - 3.5e-5)) / 3.5e-5)
    err_above = max(abs(g - w) / w for g, w in zip(got_above, want_above))
    continuous = poisson_rate(p.v_crit) == 3.5e-5
    dt = time.perf_counter() - t0
    ok = err_below <= 1e-12 and err_above <= 1e-12 and continuous and dt < 1.0
    report(1, ok, f"max rel err below={err_below:.1e} above={err_above:.1e}, "
                  f"rate(v_crit)==lambda_norm: {continuous}, {dt:.3f}s")
    assert ok


def test_criterion_2_probability_calibration(report):
    t0 = time.perf_counter()
    # 12-edge probability vector: the 11 lines of the 12-node feeder under Track 1 plus one line at p = 0.5
    f = feeder12()
    p = np.r_[probability_vector(f, failure_probabilities(f, track1(), grid12())), 0.5]
    assert len(p) == 12
    n = 10_000
    freq = sample_bits(p, make_rng(2024), n).mean(axis=0)
    z = np.abs(freq - p) / np.sqrt(np.maximum(p * (1 - p), 1e-300) / n)
    total = math.fsum(scenario_probability(bits, p) for bits in itertools.product((0, 1), repeat=12))
    dt = time.perf_counter() - t0
    ok = bool(np.all(z <= 3.0)) and abs(total - 1.0) <= 1e-9 and dt < 10.0
    report(2, ok, f"max |z| over 12 edges={z.max():.2f} (limit 3), sum of 4096 probabilities-1={total - 1:.1e}, "
                  f"{dt:.2f}s")
    assert ok


def _criterion3_model():
    f, d = feeder3(), der3()
    sc = [FailureScenario.from_failed(f.edge_ids, ["12"])]
    return f, d, sc, build_saa_mip(f, d, sc, ResourceLimits(1, 1), K=2)


def test_criterion_3_mip_vs_enumeration(report):
    t0 = time.perf_counter()
    f, d, sc, m = _criterion3_model()
    best, _ = chain3_optimum(f, d, [["12"]], K=2, G=1, Y=1)
    sol = solve_mip(m)
    SOLVED.append((f, d, solve_saa(f, d, sc, ResourceLimits(1, 1), K=2)))
    dt = time.perf_counter() - t0
    ok = sol.status == "optimal" and abs(sol.objective - best) <= 1e-6 and dt < 60
    report(3, ok, f"branch and bound {sol.objective:.9g} vs enumeration {best:.9g} "
                  f"(diff {abs(sol.objective - best):.1e}), {dt:.2f}s")
    assert ok


@pytest.mark.skipif(not highs_available(), reason="highspy not installed")
def test_criterion_4_external_solver(report, tmp_path):
    f, d, sc, m = _criterion3_model()
    path = export_lp_file(m, tmp_path / "criterion3.lp")
    ext = solve_lp_file(path)
    own = solve_mip(m)
    diff = abs(ext.objective - own.objective)
    ok = ext.status == "optimal" and diff <= 1e-6
    report(4, ok, f"HiGHS on exported LP file {ext.objective:.9g} vs embedded {own.objective:.9g} (diff {diff:.1e})")
    assert ok


# ---------------------------------------------------------------------------

def _track2_scenarios(f):
    p = probability_vector(f, failure_probabilities(f, track2(), grid12()))
    return select_scenarios(p, make_rng(7), 1000, 100, 3)


def _recovery_violations(f, sol):
    bad = []
    for s, tr in enumerate(sol.trajectories):
        for e in tr["effective_failures"]:
            seq = [p["kline"][e] for p in tr["periods"]]
            if any(b > a for a, b in zip(seq, seq[1:])):
                bad.append(f"kline {e} scenario {s}")
    perf = curve_of(f, sol).performance
    if any(b < a - 1e-9 for a, b in zip(perf, perf[1:])):
        bad.append(f"performance {perf}")
    if abs(perf[-1] - 100.0) > 1e-6:
        bad.append(f"performance(K)={perf[-1]}")
    return bad


def test_criterion_5_monotone_recovery(report):
    t0 = time.perf_counter()
    f, d = feeder12(), der12()
    sc = _track2_scenarios(f)
    K = horizon_K(f, sc, 1)
    cells = [(0, 1), (1, 1), (2, 1), (1, 2), (1, 3), (2, 2), (2, 3)]
    res = sweep(f, d, sc, cells, K=K)
    SOLVED.extend((f, d, sol) for sol in res.values())
    obj = {c: res[c].objective for c in cells}
    g_ok = obj[(0, 1)] >= obj[(1, 1)] - 1e-6 and obj[(1, 1)] >= obj[(2, 1)] - 1e-6
    y_ok = all(obj[(g, 1)] >= obj[(g, 2)] - 1e-6 and obj[(g, 2)] >= obj[(g, 3)] - 1e-6 for g in (1, 2))
    bad = [b for f_, _, sol in SOLVED for b in _recovery_violations(f_, sol)]
    dt = time.perf_counter() - t0
    ok = g_ok and y_ok and not bad and K <= 6 and len(sc) <= 3 and dt < 1800
    report(5, ok, f"|S|={len(sc)} K={K}; G 0/1/2 at Y=1: {obj[(0, 1)]:.6g}/{obj[(1, 1)]:.6g}/{obj[(2, 1)]:.6g}; "
                  f"Y 1/2/3 at G=1: {obj[(1, 1)]:.6g}/{obj[(1, 2)]:.6g}/{obj[(1, 3)]:.6g}, "
                  f"at G=2: {obj[(2, 1)]:.6g}/{obj[(2, 2)]:.6g}/{obj[(2, 3)]:.6g}; "
                  f"{len(SOLVED)} solutions checked for kline/performance monotonicity, "
                  f"{len(bad)} violations; {dt:.1f}s")
    assert ok, bad


def test_criterion_6_track_ordering(report):
    f = feeder12()
    stats = {}
    for name, tr, seed in (("Track 1", track1(), 11), ("Track 2", track2(), 12)):
        p = probability_vector(f, failure_probabilities(f, tr, grid12()))
        stats[name] = failure_statistics(f, p, 10_000, make_rng(seed), seed)
    a, b = stats["Track 1"], stats["Track 2"]
    ok = a.p_mean > b.p_mean and a.mean_failures > b.mean_failures and a.median_island_size < b.median_island_size
    report(6, ok, f"mean p {a.p_mean:.4f} > {b.p_mean:.4f}, mean failures {a.mean_failures:.3f} > "
                  f"{b.mean_failures:.3f}, median island size {a.median_island_size:g} < {b.median_island_size:g}")
    assert ok


def _served(f, period):
    return {n.name for n in f.nodes if n.has_load and period["kcc"][n.name] == 0 and period["lcc"][n.name] > 0}


def test_criterion_7_example_replay(report):
    f, d = load_feeder(DATA / "feeder12.yaml")
    _, _, sc = load_scenario_set(DATA / "example_failures.yaml", f.edge_ids)
    sol = solve_saa(f, d, sc, ResourceLimits(1, 2), fixed=Allocation.place(f, d, {"D": 1}))
    SOLVED.append((f, d, sol))
    tr = sol.trajectories[0]
    K = tr["K"]
    served = [_served(f, p) for p in tr["periods"]]
    most_before = max(len(s) for s in served[:K])
    ok = served[0] == {"C", "D"} and most_before >= 8
    report(7, ok, f"failed {sc[0].failed(f.edge_ids)}, K={K}; served at k=0: {sorted(served[0])}; "
                  f"loads served per period: {[len(s) for s in served]} (max before reconnection {most_before})")
    assert ok


def _lindistflow_residuals(f, d, sol):
    """Largest residual of each identity family over every scenario and period of ``sol``."""
    worst = {"balance": 0.0, "island": 0.0, "vdrop": 0.0, "failed_flow": 0.0, "droop": 0.0}
    a = sol.allocation
    parent = {ln.j: ln for ln in f.lines}
    for tr in sol.trajectories:
        K = tr["K"]
        for per in tr["periods"]:
            k = per["k"]
            gen_p = {n: 0.0 for n in f.node_names}
            gen_q = dict(gen_p)
            for (i, dd), on in a.ygc.items():
                if on:
                    gen_p[i] += per["pg"][(i, dd)]
                    gen_q[i] += per["qg"][(i, dd)]
            for n in f.nodes:
                j = n.name
                # node balance with the load actually served
                pt = n.pc_max * per["lcc"][j] - gen_p[j]
                qt = n.qc_max * per["lcc"][j] - gen_q[j]
                kids = [ln for ln in f.lines if ln.i == j]
                worst["balance"] = max(worst["balance"],
                                       abs(per["P"][parent[j].id] - sum(per["P"][c.id] for c in kids) - pt),
                                       abs(per["Q"][parent[j].id] - sum(per["Q"][c.id] for c in kids) - qt))
            down = [e for e in f.edge_ids if per["kline"][e]]
            for ln in f.lines:
                if per["kline"][ln.id]:
                    worst["failed_flow"] = max(worst["failed_flow"], abs(per["P"][ln.id]), abs(per["Q"][ln.id]))
                else:
                    drop = per["nu"][ln.i] - per["nu"][ln.j] - 2 * (ln.r * per["P"][ln.id] + ln.x * per["Q"][ln.id])
                    worst["vdrop"] = max(worst["vdrop"], abs(drop))
            # islands cut off from the substation must balance internally
            for isl in islands(f, down) if per["kline"][f.substation_edge] else []:
                net = sum(f.node(j).pc_max * per["lcc"][j] - gen_p[j] for j in isl)
                worst["island"] = max(worst["island"], abs(net))
            if 0 < k < K:
                for (i, dd), on in a.ygc.items():
                    if on:
                        r = per["nu"][i] + d.kq * per["qg"][(i, dd)] - d.nu_ref
                        worst["droop"] = max(worst["droop"], abs(r))
    return worst


def test_criterion_8_lindistflow(report):
    if not SOLVED:
        f, d = feeder3(), der3()
        SOLVED.append((f, d, solve_saa(f, d, [FailureScenario.from_failed(f.edge_ids, ["12"])],
                                       ResourceLimits(1, 1), K=2)))
    worst = {}
    for f, d, sol in SOLVED:
        for key, v in _lindistflow_residuals(f, d, sol).items():
            worst[key] = max(worst.get(key, 0.0), v)
    ok = all(v <= TOL for v in worst.values())
    report(8, ok, f"{len(SOLVED)} solutions; max residuals " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
           + f" (limit {TOL:.0e})")
    assert ok, worst


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
