"""Reading and writing the structured-text input files and the CSV outputs.

Inputs are YAML (JSON is a subset and is accepted too).  Mappings remember
the line they started on so that missing or bad fields are reported as
``path:line: message``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InputError, MissingDataError
from .failures import FailureScenario, NhppParams
from .network import DerSpec, Feeder, Line, Node, validate_feeder
from .wind import Grid, GridCell, StormTrack

FLOAT_FMT = "{:.12g}"


class _Map(dict):
    line = 0


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    m = _Map(loader.construct_pairs(node, deep=True))
    m.line = node.start_mark.line + 1
    return m


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def _where(path, obj=None) -> str:
    line = getattr(obj, "line", 0)
    return f"{path}:{line}" if line else str(path)


def load_document(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise InputError(f"{path}:{mark.line + 1}: parse error: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a mapping at the top level")
    return doc


def _req(doc, key, path, kind=float):
    if key not in doc or doc[key] is None:
        raise MissingDataError(f"{_where(path, doc)}: missing field {key!r}")
    return _conv(doc[key], kind, key, path, doc)


def _opt(doc, key, default, path, kind=float):
    if key not in doc or doc[key] is None:
        return default
    return _conv(doc[key], kind, key, path, doc)


def _conv(val, kind, key, path, doc):
    try:
        if kind is bool:
            if not isinstance(val, bool):
                raise ValueError
            return val
        if kind is int and isinstance(val, float) and not val.is_integer():
            raise ValueError
        return kind(val)
    except (TypeError, ValueError):
        raise InputError(f"{_where(path, doc)}: field {key!r} has bad value {val!r}") from None


def _list(doc, key, path):
    val = doc.get(key)
    if not isinstance(val, list):
        raise MissingDataError(f"{_where(path, doc)}: {key!r} must be a list")
    for item in val:
        if not isinstance(item, dict):
            raise InputError(f"{_where(path, doc)}: every entry of {key!r} must be a mapping")
    return val


def _point(v, path, doc):
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise InputError(f"{_where(path, doc)}: expected an [x_km, y_km] pair, got {v!r}")
    return (float(v[0]), float(v[1]))


# ---------------------------------------------------------------------------
# storm track and grid

def parse_track(doc, path="<track>") -> StormTrack:
    wps = []
    for w in _list(doc, "waypoints", path):
        wps.append((_req(w, "t_h", path), (_req(w, "x_km", path), _req(w, "y_km", path))))
    try:
        return StormTrack(waypoints=tuple(wps), vm=_req(doc, "vm_mps", path), rm=_req(doc, "rm_km", path),
                          b=_req(doc, "b", path), t1=_req(doc, "t1", path), t2=_req(doc, "t2", path),
                          name=str(doc.get("name", Path(str(path)).stem)))
    except InputError as exc:
        if str(exc).startswith(str(path)):
            raise
        raise InputError(f"{_where(path, doc)}: {exc}") from None


def load_track(path) -> StormTrack:
    return parse_track(load_document(path), path)


def track_document(t: StormTrack) -> dict:
    return {"name": t.name, "t1": t.t1, "t2": t.t2, "vm_mps": t.vm, "rm_km": t.rm, "b": t.b,
            "waypoints": [{"t_h": th, "x_km": c[0], "y_km": c[1]} for th, c in t.waypoints]}


def parse_grid(doc, path="<grid>") -> Grid:
    side = _req(doc, "side_km", path)
    cells = []
    for c in _list(doc, "cells", path):
        try:
            cells.append(GridCell(_req(c, "h", path, int), (_req(c, "x_km", path), _req(c, "y_km", path)), side))
        except InputError as exc:
            if str(exc).startswith(str(path)):
                raise
            raise InputError(f"{_where(path, c)}: {exc}") from None
    try:
        return Grid(cells)
    except InputError as exc:
        raise InputError(f"{_where(path, doc)}: {exc}") from None


def load_grid(path) -> Grid:
    return parse_grid(load_document(path), path)


def grid_document(g: Grid) -> dict:
    sides = {c.side for c in g.cells}
    if len(sides) != 1:
        raise InputError("grid file format needs a common cell side")
    return {"side_km": sides.pop(), "cells": [{"h": c.h, "x_km": c.center[0], "y_km": c.center[1]} for c in g.cells]}


# ---------------------------------------------------------------------------
# feeder

_NODE_FIELDS = ("pc_max", "qc_max", "c_ls", "c_lc", "lcc_min", "v_min", "v_max", "c_sd")


def parse_feeder(doc, path="<feeder>", validate=True):
    """``(Feeder, DerSpec)`` from a feeder document."""
    base = doc.get("base") or {}
    if not isinstance(base, dict):
        raise InputError(f"{_where(path, doc)}: 'base' must be a mapping")
    nodes = []
    for n in _list(doc, "nodes", path):
        kw = {k: _opt(n, k, getattr(Node, k), path) for k in _NODE_FIELDS}
        nodes.append(Node(name=str(_req(n, "name", path, str)), site=_opt(n, "site", False, path, bool), **kw))
    lines = []
    for e in _list(doc, "edges", path):
        poly = e.get("polyline") or []
        if not isinstance(poly, list):
            raise InputError(f"{_where(path, e)}: 'polyline' must be a list of points")
        i, j = str(_req(e, "i", path, str)), str(_req(e, "j", path, str))
        lines.append(Line(id=str(e.get("id", f"{i}{j}")), i=i, j=j, r=_req(e, "r", path), x=_req(e, "x", path),
                          geometry=tuple(_point(p, path, e) for p in poly)))
    f = Feeder(nodes=nodes, lines=lines, substation=str(base.get("substation", "0")),
               v_nom=_opt(base, "v_nom", 1.0, path), s_base=_opt(base, "s_base", 1.0, path),
               v_base=_opt(base, "v_base", 1.0, path), name=str(doc.get("name", Path(str(path)).stem)))
    d = doc.get("der")
    if not isinstance(d, dict):
        raise MissingDataError(f"{_where(path, doc)}: missing 'der' section")
    try:
        der = DerSpec(count=_req(d, "count", path, int), pg_max=_req(d, "pg_max", path),
                      pf_max=_req(d, "pf_max", path), kq=_req(d, "kq", path), nu_ref=_opt(d, "nu_ref", 1.0, path))
    except InputError as exc:
        if str(exc).startswith(str(path)):
            raise
        raise InputError(f"{_where(path, d)}: {exc}") from None
    if validate:
        validate_feeder(f)
    return f, der


def load_feeder(path, validate=True):
    return parse_feeder(load_document(path), path, validate)


def feeder_document(f: Feeder, der: DerSpec) -> dict:
    nodes = []
    for n in f.nodes:
        d = {"name": n.name}
        d.update({k: getattr(n, k) for k in _NODE_FIELDS})
        d["site"] = n.site
        nodes.append(d)
    edges = [{"id": ln.id, "i": ln.i, "j": ln.j, "r": ln.r, "x": ln.x, "polyline": [list(p) for p in ln.geometry]}
             for ln in f.lines]
    return {"name": f.name,
            "base": {"substation": f.substation, "v_nom": f.v_nom, "s_base": f.s_base, "v_base": f.v_base},
            "nodes": nodes, "edges": edges,
            "der": {"count": der.count, "pg_max": der.pg_max, "pf_max": der.pf_max, "kq": der.kq,
                    "nu_ref": der.nu_ref}}


# ---------------------------------------------------------------------------
# scenario sets

def scenario_set_document(seed, edge_ids, p, scenarios) -> dict:
    doc = {"seed": seed}
    if p is not None:
        doc["p"] = {str(e): float(pe) for e, pe in zip(edge_ids, p)}
    doc["scenarios"] = [{"failed": [str(e) for e in s.failed(edge_ids)], "bits": list(s.bits), "prob": s.prob}
                        for s in scenarios]
    return doc


def parse_scenario_set(doc, edge_ids, path="<scenarios>"):
    """``(seed, p list, scenarios)``; each scenario may give ``bits`` or ``failed`` edge ids."""
    pmap = doc.get("p") or {}
    missing = [e for e in edge_ids if str(e) not in pmap]
    if pmap and missing:
        raise MissingDataError(f"{_where(path, doc)}: no probability for edges {missing}")
    p = [float(pmap[str(e)]) for e in edge_ids] if pmap else None
    out = []
    for s in _list(doc, "scenarios", path):
        try:
            if "bits" in s:
                sc = FailureScenario(tuple(s["bits"]), _opt(s, "prob", 1.0, path))
                if len(sc) != len(edge_ids):
                    raise InputError(f"{len(sc)} bits for {len(edge_ids)} edges")
            else:
                sc = FailureScenario.from_failed(edge_ids, [str(e) for e in s.get("failed") or []])
                sc = FailureScenario(sc.bits, _opt(s, "prob", 1.0, path))
        except InputError as exc:
            raise InputError(f"{_where(path, s)}: {exc}") from None
        out.append(sc)
    return doc.get("seed"), p, out


def load_scenario_set(path, edge_ids):
    return parse_scenario_set(load_document(path), edge_ids, path)


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    feeder: Path | None = None
    track: Path | None = None
    grid: Path | None = None
    scenarios: Path | None = None          # optional fixed scenario set; skips sampling
    nhpp: dict = field(default_factory=dict)
    G: int = 1
    Y: int = 1
    K: int | None = None
    n_samples: int = 1000
    top: int = 100
    subset_size: int = 10
    seed: int = 0
    method: str = "decomposed"
    rel_gap: float = 1e-6
    time_limit: float | None = None
    node_limit: int | None = None
    branching: str = "most-fractional"
    workers: int = 1
    out: Path = Path("out")
    fixed_sites: dict | None = None       # site -> DER count; pins stage I

    def nhpp_params(self) -> NhppParams:
        base = NhppParams()
        kw = {k: float(self.nhpp.get(k, getattr(base, k))) for k in ("alpha", "v_crit", "lambda_norm")}
        unknown = set(self.nhpp) - set(kw)
        if unknown:
            raise InputError(f"unknown nhpp fields: {sorted(unknown)}")
        return NhppParams(**kw)

    def require(self, *names):
        for n in names:
            p = getattr(self, n)
            if p is None:
                raise MissingDataError(f"no {n} file given (config key '{n}' or --{n})")
            if not Path(p).exists():
                raise InputError(f"{n} file {p} does not exist")

    def document(self) -> dict:
        d = asdict(self)
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}


_SECTIONS = {"limits": ("G", "Y", "K"), "sampling": ("n_samples", "top", "subset_size", "seed"),
             "solver": ("method", "rel_gap", "time_limit", "node_limit", "branching")}
_INT_KEYS = {"G", "Y", "K", "n_samples", "top", "subset_size", "seed", "node_limit", "workers"}
_FLOAT_KEYS = {"rel_gap", "time_limit"}
_PATH_KEYS = ("feeder", "track", "grid", "scenarios", "out")


def parse_run_config(doc, path="<config>", base_dir=None) -> RunConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    known = {f.name for f in fields(RunConfig)} | set(_SECTIONS)
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"{_where(path, doc)}: unknown config keys {sorted(unknown)}")
    flat = {k: v for k, v in doc.items() if k not in _SECTIONS}
    for sec, keys in _SECTIONS.items():
        part = doc.get(sec) or {}
        if not isinstance(part, dict):
            raise InputError(f"{_where(path, doc)}: {sec!r} must be a mapping")
        bad = set(part) - set(keys)
        if bad:
            raise InputError(f"{_where(path, part)}: unknown {sec} keys {sorted(bad)}")
        flat.update(part)
    cfg = RunConfig()
    for k, v in flat.items():
        if v is None:
            setattr(cfg, k, None)
        elif k in _PATH_KEYS:
            setattr(cfg, k, (base_dir / str(v)) if not Path(str(v)).is_absolute() else Path(str(v)))
        elif k in _INT_KEYS:
            setattr(cfg, k, _conv(v, int, k, path, doc))
        elif k in _FLOAT_KEYS:
            setattr(cfg, k, _conv(v, float, k, path, doc))
        elif k in ("nhpp", "fixed_sites"):
            if not isinstance(v, dict):
                raise InputError(f"{_where(path, doc)}: {k!r} must be a mapping")
            setattr(cfg, k, dict(v))
        else:
            setattr(cfg, k, str(v))
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(load_document(path), path, path.parent)


# ---------------------------------------------------------------------------
# writers

def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if v == 0.0:
            return "0"                     # folds -0.0
        return FLOAT_FMT.format(v) if math.isfinite(v) else str(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))
    return path


def write_document(path, doc):
    """YAML for ``.yaml``/``.yml`` paths, JSON otherwise; keys keep insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = _plain(doc)
    if path.suffix in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(doc, sort_keys=False))
    else:
        path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return obj.item()
    return obj
