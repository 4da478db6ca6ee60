import json
import logging
import math

import numpy as np
import pytest

from oracles import chain3_optimum
from stormplan.errors import InputError, StormPlanError
from stormplan.failures import FailureScenario, NhppParams, make_rng
from stormplan.fixtures import der3, distant_track, feeder3, grid12, track2
from stormplan.mip import solve_mip
from stormplan.saa import (SamplingOptions, SolverOptions, curve_of, evaluate_second_stage, failure_probabilities,
                           failure_statistics, full_shed_cost, per_scenario_curve, probability_vector,
                           resilience_curve, run_pipeline, solve_saa, sweep, system_performance,
                           total_cost_performance, write_bundle)
from stormplan.stage2 import Allocation, ResourceLimits, build_saa_mip

from stormplan.mip.external import highs_available


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR)


def scen(f, *failed_sets):
    return [FailureScenario.from_failed(f.edge_ids, fs) for fs in failed_sets]


class TestSolveSaa:
    @pytest.mark.parametrize("G,Y,K", [(1, 1, 3), (0, 1, 3), (1, 2, 2), (0, 2, 2)])
    def test_matches_enumeration(self, f3, d3, G, Y, K):
        failed = [["12"], ["01", "12"]]
        best, per = chain3_optimum(f3, d3, failed, K, G, Y)
        sol = solve_saa(f3, d3, scen(f3, *failed), ResourceLimits(G, Y), K=K)
        assert sol.objective == pytest.approx(best, abs=1e-6)
        assert sol.J == pytest.approx(per, abs=1e-6)
        assert sol.decomposition_residual() <= 1e-6

    @pytest.mark.parametrize("method", ["bnb"] + (["highs"] if highs_available() else []))
    def test_methods_agree(self, f3, d3, method):
        sc = scen(f3, ["12"], ["01", "12"], [])
        ref = solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=3)
        other = solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=3, options=SolverOptions(method=method))
        assert other.objective == pytest.approx(ref.objective, abs=1e-6)

    def test_hand_assembled_model(self, f3, d3):
        sc = scen(f3, ["12"], ["01"])
        direct = solve_mip(build_saa_mip(f3, d3, sc, ResourceLimits(1, 1), K=3))
        assert solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=3).objective == pytest.approx(direct.objective, abs=1e-6)

    def test_solution_satisfies_model(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["12"], ["01", "12"]), ResourceLimits(1, 1), K=3)
        assert sol.model.max_violation(sol.x) <= 1e-6
        assert sol.model.objective_value(sol.x) == pytest.approx(sol.objective)

    def test_no_budget_means_no_sites(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["12"]), ResourceLimits(0, 1), K=2)
        assert sol.allocation.n_ders == 0 and not any(sol.allocation.ysc.values())
        assert sol.siting_cost == 0

    def test_fixed_allocation(self, f3, d3):
        sc = scen(f3, ["12"])
        a = Allocation.empty(f3, d3)
        sol = solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=2, fixed=a)
        assert sol.allocation == a
        best, _ = chain3_optimum(f3, d3, [["12"]], 2, 1, 1, fixed=(0, 0))
        assert sol.objective == pytest.approx(best, abs=1e-6)

    def test_more_crews_never_worse(self, f3, d3):
        sc = scen(f3, ["01", "12"])
        one = solve_saa(f3, d3, sc, ResourceLimits(0, 1), K=3)
        two = solve_saa(f3, d3, sc, ResourceLimits(0, 2), K=3)
        assert two.objective <= one.objective + 1e-6

    def test_more_ders_never_worse(self, f3, d3):
        sc = scen(f3, ["12"], ["01"])
        assert (solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=3).objective
                <= solve_saa(f3, d3, sc, ResourceLimits(0, 1), K=3).objective + 1e-6)

    def test_empty_scenarios(self, f3, d3):
        with pytest.raises(InputError):
            solve_saa(f3, d3, [], ResourceLimits(1, 1))

    def test_unknown_method(self):
        with pytest.raises(InputError):
            SolverOptions(method="gurobi")

    def test_default_horizon(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["01", "12"]), ResourceLimits(0, 1))
        assert sol.K == 3
        assert len(sol.trajectories[0]["periods"]) == 4


class TestSecondStage:
    @pytest.mark.parametrize("method", ["decomposed", "bnb"])
    def test_matches_saa_recourse(self, f3, d3, method):
        sc = scen(f3, ["12"], ["01", "12"])
        sol = solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=3)
        for s, J in zip(sc, sol.J):
            res = evaluate_second_stage(sol.allocation, f3, d3, s, ResourceLimits(1, 1), K=3,
                                        options=SolverOptions(method=method))
            assert res.J == pytest.approx(J, abs=1e-6)

    def test_per_scenario_allocation_bounds_saa(self, f3, d3):
        sc = scen(f3, ["12"], [])
        sol = solve_saa(f3, d3, sc, ResourceLimits(1, 1), K=2)
        own = per_scenario_curve(f3, d3, sc, ResourceLimits(1, 1), K=2)
        saa = curve_of(f3, sol)
        assert own.meta["per_scenario_a"]
        assert len(own.performance) == len(saa.performance) == 3


class TestPerformance:
    def test_bounds_and_endpoints(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["01", "12"]), ResourceLimits(0, 1), K=3)
        c = curve_of(f3, sol)
        assert c.k == [0, 1, 2, 3]
        assert c.performance[0] == pytest.approx(0.0, abs=1e-9)
        assert c.performance[-1] == pytest.approx(100.0)
        assert all(0.0 - 1e-9 <= v <= 100.0 + 1e-9 for v in c.performance)

    def test_half(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["01", "12"]), ResourceLimits(0, 1), K=3)
        tr = sol.trajectories[0]
        served = {"periods": [tr["periods"][-1]] * len(tr["periods"])}
        assert system_performance(f3, [tr, served], 0) == pytest.approx(50.0)

    def test_meta_and_monotone_without_ders(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["01", "12"]), ResourceLimits(0, 1), K=3)
        c = curve_of(f3, sol, label="x")
        assert c.meta["G"] == 0 and c.meta["Y"] == 1 and c.meta["label"] == "x"
        assert all(b >= a - 1e-9 for a, b in zip(c.performance, c.performance[1:]))

    def test_full_shed_cost(self, f3):
        assert full_shed_cost(f3) == pytest.approx(sum(n.c_lc + n.c_ls for n in f3.nodes))

    def test_errors(self, f3, d3):
        with pytest.raises(StormPlanError):
            system_performance(f3, [], 0)
        sol = solve_saa(f3, d3, scen(f3, ["12"]), ResourceLimits(0, 1), K=2)
        with pytest.raises(InputError):
            system_performance(f3, sol.trajectories, 9)

    def test_total_cost_reading(self, f3):
        c_ls = sum(n.c_ls for n in f3.nodes)
        assert total_cost_performance(f3, [0.0, c_ls]) == pytest.approx(50.0)

    def test_resilience_curve_from_trajectories(self, f3, d3):
        sol = solve_saa(f3, d3, scen(f3, ["12"]), ResourceLimits(1, 1), K=2)
        c = resilience_curve(f3, sol.trajectories, {"label": "t"})
        assert c.performance == curve_of(f3, sol).performance


class TestFailureStatistics:
    def test_zero_probabilities(self, f3):
        r = failure_statistics(f3, np.zeros(2), 200, make_rng(1))
        assert r.mean_failures == 0
        assert set(r.island_counts.tolist()) == {1}
        assert r.min_island_size == r.max_island_size == len(f3.node_names)

    def test_certain_failures(self, f3):
        r = failure_statistics(f3, np.ones(2), 50, make_rng(1))
        assert r.mean_failures == 2
        assert r.failure_histogram(2).tolist() == [0.0, 0.0, 1.0]

    def test_identical_p_mean(self, f3):
        r = failure_statistics(f3, np.full(2, 0.3), 2000, make_rng(2))
        assert r.p_mean == r.p_min == r.p_max == pytest.approx(0.3)

    def test_law_of_large_numbers(self, f12):
        rng = np.random.default_rng(11)
        p = rng.uniform(0.05, 0.6, len(f12.edge_ids))
        n = 10_000
        r = failure_statistics(f12, p, n, make_rng(3))
        se = math.sqrt(float(np.sum(p * (1 - p))) / n)
        assert abs(r.mean_failures - p.sum()) <= 3 * se
        assert r.failure_histogram(len(p)).sum() == pytest.approx(1.0)
        assert r.island_size_histogram(len(f12.node_names)).sum() == pytest.approx(1.0)

    def test_seeded_reproducible(self, f12):
        p = np.full(len(f12.edge_ids), 0.2)
        a = failure_statistics(f12, p, 500, make_rng(5))
        b = failure_statistics(f12, p, 500, make_rng(5))
        assert np.array_equal(a.failures, b.failures) and a.island_sizes == b.island_sizes

    def test_bad_sample_count(self, f3):
        with pytest.raises(InputError):
            failure_statistics(f3, np.zeros(2), 0, make_rng(0))


class TestProbabilities:
    def test_distant_track(self, f12):
        intens = failure_probabilities(f12, distant_track(), grid12())
        lam = NhppParams().lambda_norm
        for ln in f12.lines:
            p = intens[ln.id].p_e
            assert p == pytest.approx(1 - math.exp(-24 * ln.length * lam), rel=1e-9)
            if ln.length <= 1.0:
                assert p < 0.001

    def test_vector_order(self, f3):
        intens = failure_probabilities(f3, track2(), grid12())
        assert probability_vector(f3, intens).tolist() == [intens[e].p_e for e in f3.edge_ids]


class TestPipeline:
    def test_run_pipeline(self, f3, d3):
        sol = run_pipeline(f3, d3, track2(), grid12(), ResourceLimits(1, 1),
                           sampling=SamplingOptions(n_samples=50, top=4, subset_size=2, seed=3))
        assert sol.seed == 3 and set(sol.probabilities) == set(f3.edge_ids)
        assert sol.S == 2 and sol.decomposition_residual() <= 1e-6

    def test_sweep_matches_single_solves(self, f3, d3):
        sc = scen(f3, ["12"], ["01", "12"])
        cells = [(0, 1), (1, 1), (1, 2)]
        res = sweep(f3, d3, sc, cells, K=3)
        for G, Y in cells:
            assert res[(G, Y)].objective == pytest.approx(
                solve_saa(f3, d3, sc, ResourceLimits(G, Y), K=3).objective, abs=1e-9)

    def test_bundle(self, f3, d3, tmp_path):
        sol = solve_saa(f3, d3, scen(f3, ["12"], ["01"]), ResourceLimits(1, 1), K=2)
        out = write_bundle(tmp_path / "b", f3, d3, sol)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["allocation.csv", "curve.csv", "dispatch_0.csv", "dispatch_1.csv", "report.json",
                         "schedule_0.csv", "schedule_1.csv"]
        doc = json.loads((out / "report.json").read_text())
        assert doc["objective"] == pytest.approx(sol.objective)
        assert (out / "allocation.csv").read_text().splitlines()[0] == "site,developed,ders,der_ids"
        first = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix == ".csv"}
        write_bundle(tmp_path / "b", f3, d3, sol)
        assert first == {p.name: p.read_bytes() for p in out.iterdir() if p.suffix == ".csv"}
