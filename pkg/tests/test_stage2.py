import itertools
import logging

import numpy as np
import pytest

from oracles import chain3_optimum, chain3_schedules
from stormplan.errors import InputError
from stormplan.failures import FailureScenario
from stormplan.fixtures import EXAMPLE_FAILURES, der3, feeder3, feeder12
from stormplan.mip import MipModel, solve_mip
from stormplan.network import DerSpec, Feeder, Line, Node
from stormplan.stage2 import (Allocation, ResourceLimits, _register_stage1, add_placement_constraints,
                              build_saa_mip, build_second_stage, effective_failures, expected_column_count,
                              horizon_K, period_cost, scenario_trajectory)


def scen(f, failed):
    return FailureScenario.from_failed(f.edge_ids, failed)


@pytest.fixture(autouse=True)
def _quiet_horizon_warning(caplog):
    caplog.set_level(logging.ERROR, logger="stormplan.stage2")


def solve(m):
    sol = solve_mip(m)
    assert sol.status == "optimal"
    assert m.max_violation(sol.x) <= 1e-6
    return sol


class TestHorizon:
    def test_substation_only(self, f3):
        assert horizon_K(f3, [scen(f3, [])], 1) == 2

    def test_ceiling(self, f12):
        assert horizon_K(f12, [scen(f12, ["0A", "AB", "GH", "BC", "DE", "EF"])], 2) == 4
        assert horizon_K(f12, [scen(f12, ["AB", "GH", "BC", "DE", "EF"])], 2) == 4

    def test_example(self, f12):
        assert horizon_K(f12, [scen(f12, EXAMPLE_FAILURES)], 2) == 4

    def test_substation_always_effective(self, f12):
        assert effective_failures(f12, scen(f12, ["DK"])) == ["0A", "DK"]


class TestPlacement:
    def _site_feeder(self):
        nodes = [Node("A", v_min=0.9, v_max=1.1, site=True, c_sd=1.0), Node("B", v_min=0.9, v_max=1.1, site=True, c_sd=1.0)]
        return Feeder(nodes, [Line("0A", "0", "A", 0.1, 0.1), Line("AB", "A", "B", 0.1, 0.1)], v_nom=1.0)

    def _feasible(self, f, der, G):
        m = MipModel()
        _register_stage1(m, f, der)
        add_placement_constraints(m, f, der, ResourceLimits(G, 1))
        keys = [m.vars.key(j) for j in range(m.n_cols)]
        out = []
        for bits in itertools.product((0, 1), repeat=m.n_cols):
            if m.max_violation(np.array(bits, float)) <= 1e-12:
                out.append(dict(zip(keys, bits)))
        return out

    @staticmethod
    def _classes(patterns, sites):
        # DER permutation class = number of DERs per site
        return {tuple(sum(v for (fam, idx), v in p.items() if fam == "ygc" and idx[0] == i) for i in sites)
                for p in patterns}

    def _oracle(self, sites, n_der, G):
        # site developed iff it holds a DER; each DER at most one site; budget G
        pats = []
        for assign in itertools.product([None] + list(sites), repeat=n_der):
            used = [a for a in assign if a is not None]
            if len(used) <= G:
                pats.append({("ygc", (i, d)): int(assign[d] == i) for i in sites for d in range(n_der)})
        return pats

    def test_budget_zero(self, f3, d3):
        pats = self._feasible(f3, d3, 0)
        assert pats == [{("ysc", ("2",)): 0, ("ygc", ("2", 0)): 0}]

    def test_one_site_two_ders(self):
        f = feeder3()
        der = DerSpec(2, 0.1, 0.5, 0.25, 1.0)
        pats = self._feasible(f, der, 2)
        best = max(pats, key=lambda p: sum(v for (fam, _), v in p.items() if fam == "ygc"))
        assert sum(v for (fam, _), v in best.items() if fam == "ygc") == 2
        assert best[("ysc", ("2",))] == 1

    @pytest.mark.parametrize("G", [1, 2])
    def test_patterns_match_brute_force_classes(self, G):
        f = self._site_feeder()
        der = DerSpec(2, 0.1, 0.5, 0.25, 1.0)
        rows = self._feasible(f, der, G)
        oracle = self._oracle(f.sites, der.count, G)
        assert self._classes(rows, f.sites) == self._classes(oracle, f.sites)
        # symmetry rows remove permutations only: every class keeps a representative
        assert len(rows) < len(oracle)

    def test_two_sites_two_ders_budget_one(self):
        f = self._site_feeder()
        der = DerSpec(2, 0.1, 0.5, 0.25, 1.0)
        assert len(self._feasible(f, der, 1)) == 3


class TestRepair:
    def _schedules_from_rows(self, f, failed, K, Y):
        d = der3()
        m = build_saa_mip(f, d, [scen(f, failed)], ResourceLimits(1, Y, K))
        cols = [j for j in range(m.n_cols) if m.vars.key(j)[0] in ("yline", "kline")]
        sub = m.submodel(cols)
        keys = [sub.vars.key(j) for j in range(sub.n_cols)]
        found = set()
        for bits in itertools.product((0, 1), repeat=sub.n_cols):
            if sub.max_violation(np.array(bits, float)) <= 1e-12:
                val = dict(zip(keys, bits))
                found.add(tuple(frozenset(e for (fam, (e, kk, _)), v in val.items() if fam == "kline" and kk == k and v)
                                for k in range(K + 1)))
        return found

    def test_no_failures(self, f3):
        got = self._schedules_from_rows(f3, [], 2, 1)
        assert got == set(chain3_schedules([], 2, 1))
        # substation edge down until K
        assert got == {(frozenset({"01"}), frozenset({"01"}), frozenset())}

    def test_one_failure_enumeration(self, f3):
        got = self._schedules_from_rows(f3, ["12"], 2, 1)
        assert got == set(chain3_schedules(["12"], 2, 1))
        # the failed line can only be fixed at k=1 (k=2 belongs to the substation line) or not at all
        assert (frozenset({"01", "12"}), frozenset({"01"}), frozenset()) in got
        assert all("12" not in s[2] or "12" in s[1] for s in got)

    def test_example_schedule_feasible(self, f12):
        d = DerSpec(1, 0.44, 0.75, 0.25, 1.0)
        m = build_saa_mip(f12, d, [scen(f12, EXAMPLE_FAILURES)], ResourceLimits(1, 2, 4))
        plan = {1: ["DE", "DI"], 2: ["DK", "BC"], 4: ["0A"]}
        cols = [j for j in range(m.n_cols) if m.vars.key(j)[0] in ("yline", "kline")]
        sub = m.submodel(cols)
        x = np.zeros(sub.n_cols)
        for e in EXAMPLE_FAILURES:
            fixed_at = next(k for k, lines in plan.items() if e in lines)
            for k in range(5):
                x[sub.vars["yline", (e, k, 0)]] = float(k == fixed_at)
                x[sub.vars["kline", (e, k, 0)]] = float(k < fixed_at)
        assert sub.max_violation(x) == 0.0
        # one more repair in period 1 breaks the crew limit
        x[sub.vars["yline", ("DK", 1, 0)]], x[sub.vars["yline", ("DK", 2, 0)]] = 1.0, 0.0
        x[sub.vars["kline", ("DK", 1, 0)]] = 0.0
        assert sub.max_violation(x) > 0


class TestDispatch:
    def test_no_der_no_output(self, f3, d3):
        a = Allocation.empty(f3, d3)
        m = build_second_stage(a, f3, d3, scen(f3, ["12"]), ResourceLimits(1, 1, 2))
        sol = solve(m)
        for k in range(3):
            assert sol.x[m.vars["pg", ("2", 0, k, 0)]] == 0
            assert sol.x[m.vars["qg", ("2", 0, k, 0)]] == 0

    def test_droop_on_unloaded_island(self):
        # DER on an empty node cut off from everything: droop fixes qg from the local voltage
        nodes = [Node("1", v_min=0.9, v_max=1.1), Node("2", v_min=0.9, v_max=1.1, site=True, c_sd=10.0)]
        f = Feeder(nodes, [Line("01", "0", "1", 0.01, 0.01), Line("12", "1", "2", 0.01, 0.01)], v_nom=1.05)
        der = DerSpec(1, 0.2, 0.75, 0.25, 1.0)
        a = Allocation.place(f, der, {"2": 1})
        lim = ResourceLimits(1, 1, 3)
        m = build_second_stage(a, f, der, scen(f, ["12"]), lim)
        sol = solve(m)
        tr = scenario_trajectory(m, sol.x, f, der, 0)
        for p in tr["periods"][1:3]:
            qg = p["qg"][("2", 0)]
            assert qg == pytest.approx((der.nu_ref - p["nu"]["2"]) / der.kq, abs=1e-7)
        # no load anywhere: switching the DER's real output off costs nothing
        m0 = build_second_stage(a, f, der, scen(f, ["12"]), lim)
        for k in range(4):
            m0.fix(m0.vars["pg", ("2", 0, k, 0)], 0.0)
        assert solve(m0).objective == pytest.approx(sol.objective, abs=1e-9)

    def test_shed_node_takes_nothing(self, f3, d3):
        a = Allocation.empty(f3, d3)
        m = build_second_stage(a, f3, d3, scen(f3, ["12"]), ResourceLimits(1, 1, 2))
        sol = solve(m)
        tr = scenario_trajectory(m, sol.x, f3, d3, 0)
        p0 = tr["periods"][0]
        assert p0["kcc"]["2"] == 1
        assert p0["lcc"]["2"] == pytest.approx(0.0, abs=1e-9)
        assert p0["pc"]["2"] == pytest.approx(0.0, abs=1e-9) and p0["qc"]["2"] == pytest.approx(0.0, abs=1e-9)


class TestPowerFlow:
    def test_two_node_island_hand_solution(self):
        # island {1, 2} behind the cut substation line; DER and load both at node 2
        nodes = [Node("1", v_min=0.9, v_max=1.1),
                 Node("2", pc_max=0.1, qc_max=0.05, c_ls=1000, c_lc=100, lcc_min=0.5, v_min=0.9, v_max=1.1,
                      site=True, c_sd=10.0)]
        f = Feeder(nodes, [Line("01", "0", "1", 0.01, 0.02), Line("12", "1", "2", 0.03, 0.01)], v_nom=1.05)
        der = DerSpec(1, 0.2, 0.75, 0.25, 1.0)
        a = Allocation.place(f, der, {"2": 1})
        K = 2
        m = build_second_stage(a, f, der, scen(f, []), ResourceLimits(1, 1, K))
        x = np.zeros(m.n_cols)
        v = m.vars
        x[v["ysc", ("2",)]] = 1
        x[v["ygc", ("2", 0)]] = 1
        x[v["kline", ("01", 0, 0)]] = x[v["kline", ("01", 1, 0)]] = 1
        x[v["yline", ("01", K, 0)]] = 1
        # closed form: load served locally, reactive output from droop, no line flow
        nu = der.nu_ref - der.kq * 0.05
        for k in range(K + 1):
            x[v["pg", ("2", 0, k, 0)]] = 0.1
            x[v["qg", ("2", 0, k, 0)]] = 0.05
            x[v["lcc", ("2", k, 0)]] = 1.0
            x[v["pc", ("2", k, 0)]] = 0.1
            x[v["qc", ("2", k, 0)]] = 0.05
            level = f.v_nom if k == K else nu
            for n in ("0", "1", "2"):
                x[v["nu", (n, k, 0)]] = level
        assert 0.9 < nu < 1.1
        assert m.max_violation(x) <= 1e-12
        assert m.objective_value(x) == pytest.approx(0.0, abs=1e-12)

    def test_flow_and_drop_rows_on_optimum(self, f3, d3):
        m = build_saa_mip(f3, d3, [scen(f3, ["12"])], ResourceLimits(1, 1, 3))
        sol = solve(m)
        tr = scenario_trajectory(m, sol.x, f3, d3, 0)
        for p in tr["periods"]:
            for e in f3.edge_ids:
                ln = f3.line(e)
                if p["kline"][e]:
                    assert p["P"][e] == 0 and p["Q"][e] == 0
                else:
                    drop = p["nu"][ln.i] - 2 * (ln.r * p["P"][e] + ln.x * p["Q"][e])
                    assert p["nu"][ln.j] == pytest.approx(drop, abs=1e-9)


class TestObjective:
    def test_all_served_no_sites(self, f3, d3):
        m = build_saa_mip(f3, d3, [scen(f3, [])], ResourceLimits(0, 1, 2))
        x = np.zeros(m.n_cols)
        for k in range(3):
            for n in f3.node_names:
                x[m.vars["lcc", (n, k, 0)]] = 1.0
        assert m.objective_value(x) == pytest.approx(0.0)

    def test_all_shed(self, f12, d12):
        K = 3
        m = build_saa_mip(f12, d12, [scen(f12, [])], ResourceLimits(0, 1, K))
        x = np.zeros(m.n_cols)
        for k in range(K + 1):
            for n in f12.node_names:
                x[m.vars["kcc", (n, k, 0)]] = 1.0
        full = sum(n.c_lc + n.c_ls for n in f12.nodes)
        assert m.objective_value(x) == pytest.approx((K + 1) * full)

    def test_six_loads_shed_one_period(self):
        f = feeder12(load_nodes=["A", "B", "C", "D", "E", "F"])
        period = {"lcc": {n: 0.0 for n in f.node_names}, "kcc": {n: 1 for n in f.node_names}}
        assert period_cost(f, period) == 6600.0


class TestBuild:
    def test_no_scenarios(self, f3, d3):
        with pytest.raises(InputError):
            build_saa_mip(f3, d3, [], ResourceLimits(1, 1))

    def test_column_count_identity(self, f12, d12):
        sc = [scen(f12, EXAMPLE_FAILURES), scen(f12, ["GH"]), scen(f12, [])]
        m = build_saa_mip(f12, d12, sc, ResourceLimits(1, 2))
        assert m.n_cols == expected_column_count(f12, d12, sc, m.meta["K"])
        st = m.stats()
        assert st["columns"] == m.n_cols and st["nonzeros"] > 0 and set(st["big_m"]) == {"flow_p", "flow_q", "voltage"}

    def test_duplicate_scenario_same_optimum(self, f3, d3):
        one = solve(build_saa_mip(f3, d3, [scen(f3, ["12"])], ResourceLimits(1, 1, 2)))
        two = solve(build_saa_mip(f3, d3, [scen(f3, ["12"])] * 2, ResourceLimits(1, 1, 2)))
        assert two.objective == pytest.approx(one.objective, abs=1e-6)

    @pytest.mark.parametrize("c_sd", [300.0, 3000.0])
    @pytest.mark.parametrize("failed", [[], ["12"], ["01", "12"]])
    def test_enumeration_oracle(self, c_sd, failed):
        f, d = feeder3(c_sd), der3()
        best, _ = chain3_optimum(f, d, [failed], 2, 1, 1)
        sol = solve(build_saa_mip(f, d, [scen(f, failed)], ResourceLimits(1, 1, 2)))
        assert sol.objective == pytest.approx(best, abs=1e-6)

    def test_infeasible_allocation(self, f3):
        der = DerSpec(2, 0.1, 0.5, 0.25, 1.0)
        bad = Allocation({"2": 0}, {("2", 0): 1, ("2", 1): 0})
        with pytest.raises(InputError):
            build_second_stage(bad, f3, der, scen(f3, []), ResourceLimits(1, 1))
        over = Allocation.place(f3, der, {"2": 2})
        with pytest.raises(InputError):
            build_second_stage(over, f3, der, scen(f3, []), ResourceLimits(1, 1))


class TestSecondStage:
    def test_all_failed_no_ders(self, f3, d3):
        a = Allocation.empty(f3, d3)
        K = 3
        best, Js = chain3_optimum(f3, d3, [["01", "12"]], K, 1, 1, fixed=(0, 0))
        sol = solve(build_second_stage(a, f3, d3, scen(f3, ["01", "12"]), ResourceLimits(1, 1, K)))
        assert sol.objective == pytest.approx(Js[0], abs=1e-6)
        full = sum(n.c_lc + n.c_ls for n in f3.nodes)
        # every period before the reconnection is fully shed; the last one is free
        assert sol.objective == pytest.approx(K * full, abs=1e-6)

    def test_no_failures_cost_before_reconnection(self, f3, d3):
        a = Allocation.empty(f3, d3)
        sol = solve(build_second_stage(a, f3, d3, scen(f3, []), ResourceLimits(1, 1, 2)))
        full = sum(n.c_lc + n.c_ls for n in f3.nodes)
        assert sol.objective == pytest.approx(2 * full)

    def test_separability(self, f3, d3):
        sc = [scen(f3, ["12"]), scen(f3, []), scen(f3, ["01", "12"])]
        lim = ResourceLimits(1, 1, 3)
        saa = solve(build_saa_mip(f3, d3, sc, lim))
        x = saa.x
        m = build_saa_mip(f3, d3, sc, lim)
        from stormplan.stage2 import allocation_from
        a = allocation_from(m, x, f3, d3)
        parts = [solve(build_second_stage(a, f3, d3, s, lim)).objective for s in sc]
        siting = sum(f3.node(i).c_sd * a.ysc[i] for i in f3.sites)
        assert saa.objective == pytest.approx(siting + sum(parts) / len(parts), abs=1e-6)

    def test_monotone_in_failures(self, f3, d3):
        a = Allocation.place(f3, d3, {"2": 1})
        lim = ResourceLimits(1, 1, 3)
        small = solve(build_second_stage(a, f3, d3, scen(f3, []), lim)).objective
        big = solve(build_second_stage(a, f3, d3, scen(f3, ["12"]), lim)).objective
        assert big >= small - 1e-9

    def test_big_m_doubling(self, f3, d3):
        sc = [scen(f3, ["12"]), scen(f3, [])]
        lim = ResourceLimits(1, 1, 3)
        a = solve(build_saa_mip(f3, d3, sc, lim)).objective
        b = solve(build_saa_mip(f3, d3, sc, lim, big_m_scale=2.0)).objective
        assert abs(a - b) <= 1e-6 * max(1.0, abs(a))

    def test_kline_monotone_and_single_repair(self, f3, d3):
        sc = [scen(f3, ["12"]), scen(f3, ["01", "12"])]
        m = build_saa_mip(f3, d3, sc, ResourceLimits(1, 2, 3))
        sol = solve(m)
        for s in range(2):
            tr = scenario_trajectory(m, sol.x, f3, d3, s)
            for e in tr["effective_failures"]:
                seq = [p["kline"][e] for p in tr["periods"]]
                assert all(b <= a for a, b in zip(seq, seq[1:]))
                assert sum(e in p["repaired"] for p in tr["periods"]) <= 1
