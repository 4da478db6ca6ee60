"""Radial feeder data model, validation, line geometry and island detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import FeederError, InputError, OutOfRangeError


@dataclass(frozen=True)
class Node:
    name: str
    pc_max: float = 0.0
    qc_max: float = 0.0
    c_ls: float = 0.0
    c_lc: float = 0.0
    lcc_min: float = 0.0
    v_min: float = 0.81
    v_max: float = 1.21
    site: bool = False
    c_sd: float = 0.0

    @property
    def has_load(self) -> bool:
        return self.pc_max > 0 or self.qc_max > 0


@dataclass(frozen=True)
class Line:
    id: str
    i: str
    j: str
    r: float
    x: float
    geometry: tuple = ()

    @property
    def length(self) -> float:
        pts = self.geometry
        return sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))


@dataclass(frozen=True)
class DerSpec:
    count: int
    pg_max: float
    pf_max: float
    kq: float
    nu_ref: float

    def __post_init__(self):
        if self.count < 0 or not self.pg_max > 0 or self.pf_max < 0 or not self.kq > 0:
            raise InputError("DER spec needs count >= 0, pg_max > 0, pf_max >= 0, kq > 0")


@dataclass
class Feeder:
    """Radial distribution feeder rooted at ``substation``.

    Quantities are per-unit on the ``s_base``/``v_base`` pair; voltages are
    squared magnitudes.
    """

    nodes: list
    lines: list
    substation: str = "0"
    v_nom: float = 1.0
    s_base: float = 1.0
    v_base: float = 1.0
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # lookups -----------------------------------------------------------
    @property
    def node_names(self) -> list:
        return [n.name for n in self.nodes]

    @property
    def edge_ids(self) -> list:
        return [ln.id for ln in self.lines]

    def node(self, name) -> Node:
        return self._node_map()[name]

    def line(self, eid) -> Line:
        try:
            return self._line_map()[eid]
        except KeyError:
            raise InputError(f"unknown edge id {eid!r}") from None

    def _node_map(self):
        if "nodes" not in self._cache:
            self._cache["nodes"] = {n.name: n for n in self.nodes}
        return self._cache["nodes"]

    def _line_map(self):
        if "lines" not in self._cache:
            self._cache["lines"] = {ln.id: ln for ln in self.lines}
        return self._cache["lines"]

    @property
    def substation_edge(self) -> str:
        return [ln.id for ln in self.lines if ln.i == self.substation][0]

    @property
    def sites(self) -> list:
        return [n.name for n in self.nodes if n.site]

    @property
    def load_nodes(self) -> list:
        return [n.name for n in self.nodes if n.has_load]

    def child_lines(self, node) -> list:
        if "children" not in self._cache:
            ch = {n: [] for n in self.node_names + [self.substation]}
            for ln in self.lines:
                ch.setdefault(ln.i, []).append(ln.id)
            self._cache["children"] = ch
        return self._cache["children"].get(node, [])

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from([self.substation] + self.node_names)
        for ln in self.lines:
            g.add_edge(ln.i, ln.j, id=ln.id)
        return g

    def total_pc(self) -> float:
        return sum(n.pc_max for n in self.nodes)

    def total_qc(self) -> float:
        return sum(n.qc_max for n in self.nodes)


def validate_feeder(f: Feeder) -> Feeder:
    """Check every structural and parameter invariant; raise listing all violations."""
    problems = []
    names = f.node_names
    if f.substation in names:
        problems.append(f"substation {f.substation!r} must not appear among load nodes")
    if len(set(names)) != len(names):
        problems.append("duplicate node names")
    all_nodes = set(names) | {f.substation}
    ids = [ln.id for ln in f.lines]
    if len(set(ids)) != len(ids):
        problems.append("duplicate edge ids")

    indeg = {n: 0 for n in all_nodes}
    for ln in f.lines:
        for end in (ln.i, ln.j):
            if end not in all_nodes:
                problems.append(f"edge {ln.id}: unknown endpoint {end!r}")
        if not (ln.r > 0 and ln.x > 0):
            problems.append(f"edge {ln.id}: nonpositive impedance (r={ln.r}, x={ln.x})")
        if ln.j in indeg:
            indeg[ln.j] += 1
    root_edges = [ln for ln in f.lines if ln.i == f.substation]
    if len(root_edges) != 1:
        problems.append(f"exactly one edge must leave the substation, found {len(root_edges)}")
    if indeg.get(f.substation, 0) > 0:
        problems.append("wrong edge orientation: an edge points into the substation")
    for n in names:
        if indeg.get(n, 0) > 1:
            problems.append(f"wrong edge orientation: node {n!r} has {indeg[n]} incoming edges")

    g = nx.MultiGraph()
    g.add_nodes_from(all_nodes)
    g.add_edges_from((ln.i, ln.j) for ln in f.lines if ln.i in all_nodes and ln.j in all_nodes)
    try:
        cyc = nx.find_cycle(g)
        problems.append("cycle detected through nodes " + ", ".join(str(u) for u, *_ in cyc))
    except nx.NetworkXNoCycle:
        pass
    if f.substation in g:
        reach = nx.node_connected_component(g, f.substation)
        loose = sorted(all_nodes - reach, key=str)
        if loose:
            problems.append("disconnected nodes: " + ", ".join(map(str, loose)))
        dg = nx.DiGraph()
        dg.add_nodes_from(all_nodes)
        dg.add_edges_from((ln.i, ln.j) for ln in f.lines)
        down = nx.descendants(dg, f.substation) | {f.substation}
        wrong = sorted((reach - down), key=str)
        if wrong and not loose:
            problems.append("wrong edge orientation: not reachable from the substation: " + ", ".join(map(str, wrong)))

    for n in f.nodes:
        if not 0.0 <= n.lcc_min <= 1.0:
            problems.append(f"node {n.name}: lcc_min={n.lcc_min} outside [0, 1]")
        if not n.v_min < f.v_nom < n.v_max:
            problems.append(f"node {n.name}: need v_min < v_nom < v_max ({n.v_min}, {f.v_nom}, {n.v_max})")
        if n.pc_max < 0 or n.qc_max < 0:
            problems.append(f"node {n.name}: negative nominal demand")
        if min(n.c_ls, n.c_lc, n.c_sd) < 0:
            problems.append(f"node {n.name}: negative cost")
    if problems:
        raise FeederError(problems)
    return f


def line_cell_lengths(geometry: Sequence, grid: Iterable) -> dict:
    """Length (km) of a polyline inside each grid cell it crosses.

    Points on a shared cell boundary belong to the lowest-id cell containing them.
    """
    cells = sorted(grid, key=lambda c: c.h)
    if not cells:
        raise InputError("empty grid")
    bounds = np.array([c.bounds for c in cells])
    xs = np.unique(np.concatenate([bounds[:, 0], bounds[:, 2]]))
    ys = np.unique(np.concatenate([bounds[:, 1], bounds[:, 3]]))
    eps = 1e-12
    out = {}
    pts = [tuple(map(float, p)) for p in geometry]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg_len = math.hypot(dx, dy)
        if seg_len == 0:
            continue
        ts = [0.0, 1.0]
        # near-vertical/horizontal segments may overflow to +-inf; clipping below absorbs that
        with np.errstate(over="ignore"):
            if dx != 0:
                ts.extend(((xs - x0) / dx).tolist())
            if dy != 0:
                ts.extend(((ys - y0) / dy).tolist())
        ts = np.unique(np.clip(ts, 0.0, 1.0))
        for ta, tb in zip(ts[:-1], ts[1:]):
            if tb - ta <= eps:
                continue
            tm = 0.5 * (ta + tb)
            px, py = x0 + tm * dx, y0 + tm * dy
            inside = np.nonzero((bounds[:, 0] - eps <= px) & (px <= bounds[:, 2] + eps)
                                & (bounds[:, 1] - eps <= py) & (py <= bounds[:, 3] + eps))[0]
            if inside.size == 0:
                raise OutOfRangeError(f"line geometry point ({px:.4f}, {py:.4f}) lies outside the grid")
            h = cells[inside[0]].h
            out[h] = out.get(h, 0.0) + (tb - ta) * seg_len
    return out


def edge_cell_lengths(f: Feeder, grid) -> dict:
    cells = list(grid)
    return {ln.id: line_cell_lengths(ln.geometry, cells) for ln in f.lines}


def islands(f: Feeder, failed: Iterable) -> list:
    """Node sets of the microgrid islands left after removing ``failed`` lines.

    The substation line is always treated as cut; the component holding the
    substation is not an island.
    """
    failed = set(failed)
    known = set(f.edge_ids)
    unknown = failed - known
    if unknown:
        raise InputError(f"unknown edge ids: {sorted(map(str, unknown))}")
    cut = failed | {f.substation_edge}
    g = nx.Graph()
    g.add_nodes_from([f.substation] + f.node_names)
    g.add_edges_from((ln.i, ln.j) for ln in f.lines if ln.id not in cut)
    order = {n: k for k, n in enumerate(f.node_names)}
    comps = [c for c in nx.connected_components(g) if f.substation not in c]
    return sorted((set(c) for c in comps), key=lambda c: min(order[n] for n in c))
