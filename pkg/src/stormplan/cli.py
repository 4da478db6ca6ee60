"""Command-line front end: ``stormplan <command> [options]``.

Exit codes: 0 success, 1 input error, 2 infeasible model, 3 solver limit or
numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InfeasibleModelError, InputError, SolverLimitError, StormPlanError
from .failures import FailureScenario, make_rng, select_scenarios
from .fileio import (RunConfig, load_feeder, load_grid, load_run_config, load_scenario_set, load_track,
                     scenario_set_document, write_csv, write_document)
from .saa import (SolverOptions, curve_of, failure_probabilities, failure_statistics, per_scenario_curve,
                  probability_vector, solve_saa, sweep, write_bundle)
from .stage2 import Allocation, ResourceLimits, build_saa_mip, horizon_K
from .wind import hourly_wind_table

log = logging.getLogger("stormplan")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's default status 2 would collide with "infeasible"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p):
    g = p.add_argument_group("run configuration (flags override the config file)")
    g.add_argument("--config", type=Path, help="run configuration file (YAML or JSON)")
    g.add_argument("--seed", type=int, help="master seed for scenario sampling")
    g.add_argument("--workers", type=int, help="worker processes for sweeps and per-scenario solves")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--feeder", type=Path)
    g.add_argument("--track", type=Path)
    g.add_argument("--grid", type=Path)
    g.add_argument("--scenarios", type=Path, help="fixed scenario-set file; skips sampling")
    g.add_argument("-v", "--verbose", action="store_true")


def _solver_flags(p):
    g = p.add_argument_group("model and solver")
    g.add_argument("-G", type=int, help="DER budget")
    g.add_argument("-Y", type=int, help="repairs per period")
    g.add_argument("-K", type=int, help="horizon override")
    g.add_argument("--samples", type=int, dest="n_samples", help="scenarios sampled before selection")
    g.add_argument("--top", type=int, help="most probable distinct scenarios kept")
    g.add_argument("--subset", type=int, dest="subset_size", help="scenarios in the SAA problem")
    g.add_argument("--method", choices=("decomposed", "bnb", "highs"))
    g.add_argument("--rel-gap", type=float, dest="rel_gap")
    g.add_argument("--time-limit", type=float, dest="time_limit")
    g.add_argument("--node-limit", type=int, dest="node_limit")
    g.add_argument("--branching", choices=("most-fractional", "reliability"))
    g.add_argument("--fix", action="append", metavar="SITE=N", default=None,
                   help="pin stage I: N DERs at SITE (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stormplan", description="Storm-resilience planning for radial distribution feeders.")
    p.add_argument("--version", action="version", version=f"stormplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    w = sub.add_parser("wind", help="hourly wind speed per grid cell (wind.csv)")
    _common(w)
    pr = sub.add_parser("probabilities", help="per-line cumulative intensity and failure probability")
    _common(pr)
    pr.add_argument("--nhpp", action="append", metavar="KEY=VALUE", help="alpha, v_crit or lambda_norm override")
    st = sub.add_parser("stats", help="failure-probability and island statistics over sampled scenarios")
    _common(st)
    st.add_argument("--nhpp", action="append", metavar="KEY=VALUE")
    st.add_argument("--samples", type=int, dest="n_samples", help="sampled scenarios (default 1000)")

    pl = sub.add_parser("plan", help="solve the SAA problem and write a results bundle")
    _common(pl)
    _solver_flags(pl)
    pl.add_argument("--nhpp", action="append", metavar="KEY=VALUE")
    pl.add_argument("--sweep", nargs="+", metavar="AXIS=RANGE",
                    help="grid of (G, Y) cells, e.g. --sweep G=0..2 Y=1")
    pl.add_argument("--per-scenario-a", action="store_true",
                    help="also report performance with each scenario's own optimal allocation")
    pl.add_argument("--check-lp", action="store_true",
                    help="export the model as an LP file and re-solve it with HiGHS as a cross-check")

    ex = sub.add_parser("export-lp", help="write the SAA model in LP format")
    _common(ex)
    _solver_flags(ex)
    ex.add_argument("--nhpp", action="append", metavar="KEY=VALUE")
    ex.add_argument("path", type=Path, nargs="?", help="LP file (default <out>/model.lp)")
    ex.add_argument("--bracket-names", action="store_true",
                    help="keep '[' and ']' in column names (many readers reject them)")
    return p


# ---------------------------------------------------------------------------
# configuration

def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    for key in ("seed", "workers", "out", "feeder", "track", "grid", "scenarios", "n_samples", "top",
                "subset_size", "method", "rel_gap", "time_limit", "node_limit", "branching"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for key in ("G", "Y", "K"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for item in getattr(args, "nhpp", None) or []:
        k, v = _pair(item, "--nhpp")
        try:
            cfg.nhpp[k] = float(v)
        except ValueError:
            raise InputError(f"--nhpp {item}: value must be a number") from None
    if getattr(args, "fix", None):
        cfg.fixed_sites = {}
        for item in args.fix:
            k, v = _pair(item, "--fix")
            if not v.isdigit():
                raise InputError(f"--fix {item}: count must be a non-negative integer")
            cfg.fixed_sites[k] = int(v)
    if cfg.workers < 1:
        raise InputError("--workers must be at least 1")
    return cfg


def _pair(item, flag):
    if "=" not in item:
        raise InputError(f"{flag} expects KEY=VALUE, got {item!r}")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def parse_range(text: str) -> list:
    """``1..3`` -> [1, 2, 3]; ``0,2`` -> [0, 2]; ``2`` -> [2]."""
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise InputError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"bad range {text!r}; use A..B or a comma list") from None


def parse_sweep(items, cfg: RunConfig) -> list:
    axes = {"G": [cfg.G], "Y": [cfg.Y]}
    for item in items:
        k, v = _pair(item, "--sweep")
        if k not in axes:
            raise InputError(f"--sweep axis must be G or Y, got {k!r}")
        axes[k] = parse_range(v)
    return [(g, y) for g in axes["G"] for y in axes["Y"]]


def _options(cfg: RunConfig) -> SolverOptions:
    return SolverOptions(method=cfg.method, rel_gap=cfg.rel_gap, node_limit=cfg.node_limit,
                         time_limit=cfg.time_limit, branching=cfg.branching)


def _inputs(cfg: RunConfig, need_track=True):
    cfg.require("feeder")
    f, der = load_feeder(cfg.feeder)
    track = grid = None
    if need_track:
        cfg.require("track", "grid")
        track, grid = load_track(cfg.track), load_grid(cfg.grid)
    return f, der, track, grid


def _scenarios(cfg: RunConfig, f):
    """Scenario list plus the document describing how it was obtained."""
    if cfg.scenarios is not None:
        cfg.require("scenarios")
        seed, p, scen = load_scenario_set(cfg.scenarios, f.edge_ids)
        if not scen:
            raise InputError(f"{cfg.scenarios}: no scenarios")
        return scen, p, seed
    cfg.require("track", "grid")
    track, grid = load_track(cfg.track), load_grid(cfg.grid)
    intens = failure_probabilities(f, track, grid, cfg.nhpp_params())
    p = probability_vector(f, intens)
    scen = select_scenarios(p, make_rng(cfg.seed), cfg.n_samples, cfg.top, cfg.subset_size)
    return scen, list(p), cfg.seed


def _fixed(cfg, f, der):
    if cfg.fixed_sites is None:
        return None
    return Allocation.place(f, der, {k: v for k, v in cfg.fixed_sites.items() if v})


# ---------------------------------------------------------------------------
# commands

def cmd_wind(cfg: RunConfig) -> Path:
    cfg.require("track", "grid")
    track, grid = load_track(cfg.track), load_grid(cfg.grid)
    hours, ids, speeds = hourly_wind_table(track, grid)
    rows = [(t, h, speeds[a, b]) for a, t in enumerate(hours) for b, h in enumerate(ids)]
    return write_csv(Path(cfg.out) / "wind.csv", ["t", "h", "v"], rows)


def cmd_probabilities(cfg: RunConfig) -> Path:
    f, der, track, grid = _inputs(cfg)
    intens = failure_probabilities(f, track, grid, cfg.nhpp_params())
    rows = [(e, f.line(e).length, intens[e].lambda_e, intens[e].p_e) for e in f.edge_ids]
    return write_csv(Path(cfg.out) / "probabilities.csv", ["edge", "length_km", "lambda", "p"], rows)


def cmd_stats(cfg: RunConfig, n_samples: int | None = None) -> Path:
    f, der, track, grid = _inputs(cfg)
    intens = failure_probabilities(f, track, grid, cfg.nhpp_params())
    p = probability_vector(f, intens)
    n = n_samples or cfg.n_samples
    rep = failure_statistics(f, p, n, make_rng(cfg.seed), seed=cfg.seed)
    out = Path(cfg.out)
    summary = [
        ("p_mean", rep.p_mean), ("p_min", rep.p_min), ("p_max", rep.p_max),
        ("samples", rep.n_samples), ("seed", cfg.seed),
        ("failures_mean", rep.mean_failures), ("failures_expected", float(p.sum())),
        ("islands_mean", float(rep.island_counts.mean())),
        ("island_size_median", rep.median_island_size),
        ("island_size_min", rep.min_island_size), ("island_size_max", rep.max_island_size),
    ]
    write_csv(out / "stats.csv", ["quantity", "value"], summary)
    n_lines, n_nodes = len(f.lines), len(f.nodes) + 1
    write_csv(out / "failure_histogram.csv", ["failures", "probability"],
              list(enumerate(map(float, rep.failure_histogram(n_lines)))))
    write_csv(out / "island_histogram.csv", ["size", "probability"],
              list(enumerate(map(float, rep.island_size_histogram(n_nodes)))))
    text = [f"track {track.name}: {n} sampled scenarios (seed {cfg.seed})"]
    text += [f"  {k:<20} {v:.6g}" if isinstance(v, float) else f"  {k:<20} {v}" for k, v in summary]
    (out / "stats.txt").write_text("\n".join(text) + "\n")
    return out / "stats.csv"


def cmd_plan(cfg: RunConfig, sweep_items=None, per_scenario_a=False, check_lp=False) -> Path:
    f, der, _, _ = _inputs(cfg, need_track=cfg.scenarios is None)
    scen, p, seed = _scenarios(cfg, f)
    opts = _options(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_document(out / "scenarios.yaml", scenario_set_document(seed, f.edge_ids, p, scen))
    fixed = _fixed(cfg, f, der)
    prob = dict(zip(f.edge_ids, p)) if p else None
    base = {"config": cfg.document(), "seed": seed}

    if sweep_items:
        if fixed is not None:
            raise InputError("--sweep and --fix cannot be combined")
        cells = parse_sweep(sweep_items, cfg)
        K = cfg.K if cfg.K is not None else horizon_K(f, scen, min(y for _, y in cells))
        t0 = time.perf_counter()
        sols = sweep(f, der, scen, cells, K=K, options=opts, workers=cfg.workers)
        curves = []
        rows = []
        for (g, y), sol in sols.items():
            sol.probabilities, sol.seed = prob, seed
            c = curve_of(f, sol, label=f"G{g}_Y{y}")
            curves.append(c)
            write_bundle(out / f"G{g}_Y{y}", f, der, sol, [c], base)
            rows.append((g, y, sol.K, sol.objective, sol.siting_cost, float(np.mean(sol.J)),
                         ";".join(f"{i}:{sol.allocation.ders_at(i)}" for i in f.sites if sol.allocation.ysc[i])))
        write_csv(out / "sweep.csv", ["G", "Y", "K", "objective", "siting_cost", "mean_J", "allocation"], rows)
        write_csv(out / "curve.csv", ["curve", "G", "Y", "k", "performance"],
                  [(c.meta["label"], c.meta["G"], c.meta["Y"], k, v) for c in curves
                   for k, v in zip(c.k, c.performance)])
        log.info("sweep of %d cells done in %.1fs", len(cells), time.perf_counter() - t0)
        return out

    limits = ResourceLimits(cfg.G, cfg.Y, cfg.K)
    sol = solve_saa(f, der, scen, limits, options=opts, fixed=fixed)
    sol.probabilities, sol.seed = prob, seed
    curves = [curve_of(f, sol, label="saa")]
    if per_scenario_a:
        c = per_scenario_curve(f, der, scen, limits, K=sol.K, options=opts)
        c.meta["label"] = "per_scenario_a"
        curves.append(c)
    report = dict(base)
    if check_lp:
        report["lp_check"] = _check_lp(sol, out / "model.lp")
    write_bundle(out, f, der, sol, curves, report)
    return out


def _check_lp(sol, path) -> dict:
    from .mip.external import highs_available, solve_lp_file
    from .mip.lpfile import export_lp_file
    if not highs_available():
        raise InputError("--check-lp needs the optional 'highspy' package")
    export_lp_file(sol.model, path)
    ext = solve_lp_file(path)
    if ext.x is None:
        raise SolverLimitError(f"external solver returned {ext.status} on {path}")
    diff = abs(ext.objective - sol.objective)
    ok = diff <= 1e-6 * max(1.0, abs(sol.objective))
    log.info("LP cross-check: embedded %.12g, external %.12g", sol.objective, ext.objective)
    if not ok:
        from .errors import NumericalError
        raise NumericalError(f"LP cross-check failed: embedded {sol.objective:.12g} vs external {ext.objective:.12g}")
    return {"path": str(path), "external_objective": ext.objective, "difference": diff}


def cmd_export_lp(cfg: RunConfig, path=None, bracket_names=False) -> Path:
    from .mip.lpfile import export_lp_file
    f, der, _, _ = _inputs(cfg, need_track=cfg.scenarios is None)
    scen, _, _ = _scenarios(cfg, f)
    m = build_saa_mip(f, der, scen, ResourceLimits(cfg.G, cfg.Y, cfg.K), fixed=_fixed(cfg, f, der))
    path = Path(path) if path else Path(cfg.out) / "model.lp"
    export_lp_file(m, path, bracket_names=bracket_names)
    return path


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "wind":
            out = cmd_wind(cfg)
        elif args.command == "probabilities":
            out = cmd_probabilities(cfg)
        elif args.command == "stats":
            out = cmd_stats(cfg, args.n_samples)
        elif args.command == "plan":
            out = cmd_plan(cfg, args.sweep, args.per_scenario_a, args.check_lp)
        else:
            out = cmd_export_lp(cfg, args.path, args.bracket_names)
    except InputError as exc:
        print(f"stormplan: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleModelError as exc:
        print(f"stormplan: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StormPlanError as exc:
        print(f"stormplan: solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(out)
    return EXIT_OK


if __name__ == "__main__":   # pragma: no cover
    sys.exit(main())
