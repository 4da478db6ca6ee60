"""Small built-in test systems.

``feeder12`` follows the 12-node schematic used for the illustrative
restoration example: nodes laid out on a 3 km x 4 km grid of 1 km cells,
substation at the top.  ``feeder3`` is a two-line chain used for exhaustive
cross-checks.  The storm tracks are synthetic Category-1 storms; the second
passes farther from the feeder than the first.
"""

from __future__ import annotations

from .network import DerSpec, Feeder, Line, Node
from .wind import Grid, StormTrack

# node positions in km (x east, y north)
FEEDER12_XY = {
    "0": (1.5, 3.85),
    "A": (1.5, 3.0),
    "G": (2.0, 2.5),
    "H": (2.75, 2.75),
    "B": (0.25, 2.75),
    "C": (0.25, 1.5),
    "D": (1.5, 1.25),
    "I": (1.5, 0.25),
    "J": (0.5, 0.25),
    "K": (1.5, 2.0),
    "E": (2.75, 1.25),
    "F": (2.75, 0.5),
}
FEEDER12_EDGES = [("0", "A"), ("A", "B"), ("A", "G"), ("G", "H"), ("B", "C"), ("C", "D"),
                  ("D", "E"), ("D", "I"), ("I", "J"), ("D", "K"), ("E", "F")]

# failure set of the illustrative example (substation line included)
EXAMPLE_FAILURES = ["0A", "BC", "DE", "DI", "DK"]


def feeder12(load_nodes=None, sites=("A", "D", "H"), c_sd=500.0, r=0.01, x=0.01) -> Feeder:
    """12-node radial feeder; every non-substation node carries a load unless ``load_nodes`` is given."""
    names = [n for n in FEEDER12_XY if n != "0"]
    load_nodes = set(names if load_nodes is None else load_nodes)
    nodes = []
    for n in names:
        loaded = n in load_nodes
        nodes.append(Node(
            name=n,
            pc_max=0.1 if loaded else 0.0,
            qc_max=0.05 if loaded else 0.0,
            c_ls=1000.0 if loaded else 0.0,
            c_lc=100.0 if loaded else 0.0,
            lcc_min=0.5 if loaded else 0.0,
            v_min=0.9,
            v_max=1.1,
            site=n in sites,
            c_sd=c_sd if n in sites else 0.0,
        ))
    lines = [Line(id=f"{i}{j}", i=i, j=j, r=r, x=x, geometry=(FEEDER12_XY[i], FEEDER12_XY[j]))
             for i, j in FEEDER12_EDGES]
    return Feeder(nodes=nodes, lines=lines, substation="0", v_nom=1.05, name="feeder12")


def der12(count=2, total_fraction=0.8, feeder: Feeder | None = None) -> DerSpec:
    """Homogeneous DER fleet whose total rating is ``total_fraction`` of the feeder demand."""
    f = feeder or feeder12()
    pg = total_fraction * f.total_pc() / count
    return DerSpec(count=count, pg_max=pg, pf_max=0.75, kq=0.25, nu_ref=1.0)


def grid12() -> Grid:
    return Grid.regular(3, 4, 1.0)


def feeder3(c_sd=300.0) -> Feeder:
    """Chain 0 -> 1 -> 2 with a single load and a single candidate site at node 2."""
    nodes = [
        Node("1", v_min=0.9, v_max=1.1),
        Node("2", pc_max=0.1, qc_max=0.05, c_ls=1000.0, c_lc=100.0, lcc_min=0.5,
             v_min=0.9, v_max=1.1, site=True, c_sd=c_sd),
    ]
    lines = [
        Line("01", "0", "1", 0.01, 0.01, ((0.5, 0.5), (0.5, 1.5))),
        Line("12", "1", "2", 0.01, 0.01, ((0.5, 1.5), (1.5, 1.5))),
    ]
    return Feeder(nodes=nodes, lines=lines, substation="0", v_nom=1.05, name="feeder3")


def der3() -> DerSpec:
    return DerSpec(count=1, pg_max=0.08, pf_max=0.75, kq=0.25, nu_ref=1.0)


def track1() -> StormTrack:
    """Eye wall passes over the feeder."""
    return StormTrack(waypoints=((0.0, (-190.0, 24.0)), (24.0, (190.0, 24.0))),
                      vm=33.0, rm=22.0, b=1.4, t1=0.0, t2=24.0, name="track1")


def track2() -> StormTrack:
    """Same storm shifted north so the eye wall stays farther from the feeder."""
    return StormTrack(waypoints=((0.0, (-190.0, 55.0)), (24.0, (190.0, 55.0))),
                      vm=33.0, rm=22.0, b=1.4, t1=0.0, t2=24.0, name="track2")


def distant_track() -> StormTrack:
    """Storm far from the feeder: winds stay below the critical speed."""
    return StormTrack(waypoints=((0.0, (-400.0, 600.0)), (24.0, (400.0, 600.0))),
                      vm=33.0, rm=22.0, b=1.4, t1=0.0, t2=24.0, name="distant")
