"""Holland parametric wind field driven by a forecast storm track.

Coordinates are planar kilometres; times are hours.  Wind speeds are
evaluated once per hour while the storm passes over the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, OutOfRangeError

# distances closer than this to the storm centre are clamped (km)
R_CLAMP_KM = 0.1
TIME_STEP_H = 1.0


@dataclass(frozen=True)
class StormTrack:
    """Storm centre waypoints plus the Holland profile parameters.

    ``waypoints`` is a sequence of ``(t_h, (x_km, y_km))`` pairs on the same
    hour axis as ``t1`` and ``t2``.
    """

    waypoints: tuple
    vm: float
    rm: float
    b: float
    t1: float
    t2: float
    name: str = ""

    def __post_init__(self):
        wps = tuple((float(t), (float(c[0]), float(c[1]))) for t, c in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        problems = []
        if len(wps) < 2:
            problems.append("track needs at least 2 waypoints")
        times = [t for t, _ in wps]
        if any(b <= a for a, b in zip(times, times[1:])):
            problems.append("waypoint times must be strictly increasing")
        if not (self.vm > 0 and self.rm > 0 and self.b > 0):
            problems.append("vm, rm and b must be positive")
        if not self.t2 > self.t1:
            problems.append("t2 must exceed t1")
        elif times and (self.t1 < times[0] or self.t2 > times[-1]):
            problems.append(f"waypoints span [{times[0]}, {times[-1]}] does not cover [{self.t1}, {self.t2}]")
        if problems:
            raise InputError("; ".join(problems))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.waypoints])

    @property
    def positions(self) -> np.ndarray:
        return np.array([c for _, c in self.waypoints])

    def hours(self) -> np.ndarray:
        """Hourly evaluation instants t1, t1+1, ..., t2 (t2 included)."""
        n = int(math.floor((self.t2 - self.t1) / TIME_STEP_H + 1e-9))
        return self.t1 + TIME_STEP_H * np.arange(n + 1)


@dataclass(frozen=True)
class GridCell:
    h: int
    center: tuple
    side: float = 1.0

    def __post_init__(self):
        if not self.side > 0:
            raise InputError(f"cell {self.h}: side must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax) of the cell square."""
        half = 0.5 * self.side
        x, y = self.center
        return (x - half, y - half, x + half, y + half)


@dataclass(frozen=True)
class WindSample:
    cell: int
    t: float
    v: float
    r: float


@dataclass
class Grid:
    cells: list = field(default_factory=list)

    def __post_init__(self):
        ids = [c.h for c in self.cells]
        if len(set(ids)) != len(ids):
            raise InputError("grid cell ids must be unique")

    @classmethod
    def regular(cls, nx: int, ny: int, side: float = 1.0, origin=(0.0, 0.0)) -> "Grid":
        """Row-major ``nx`` by ``ny`` grid whose lower-left corner is ``origin``."""
        cells = []
        for j in range(ny):
            for i in range(nx):
                center = (origin[0] + (i + 0.5) * side, origin[1] + (j + 0.5) * side)
                cells.append(GridCell(h=j * nx + i, center=center, side=side))
        return cls(cells)

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)

    @property
    def ids(self):
        return [c.h for c in self.cells]


def storm_center_at(track: StormTrack, t: float) -> tuple:
    """Piecewise-linear interpolation of the storm centre at hour ``t``."""
    times = track.times
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise OutOfRangeError(f"t={t} outside waypoint span [{times[0]}, {times[-1]}]")
    pos = track.positions
    return (float(np.interp(t, times, pos[:, 0])), float(np.interp(t, times, pos[:, 1])))


def holland_velocity(track: StormTrack, r):
    """Holland (1980) gradient wind speed at distance ``r`` km from the centre.

    Accepts scalars or arrays; every ``r`` must be strictly positive.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0) or not np.all(np.isfinite(r_arr)):
        raise InputError("holland_velocity requires finite r > 0; clamp the distance first")
    ratio_b = (track.rm / r_arr) ** track.b
    v = track.vm * np.sqrt(ratio_b) * np.sqrt(np.exp(1.0 - ratio_b))
    if np.ndim(v) == 0:
        return float(v)
    return v


def wind_field_at(track: StormTrack, grid: Sequence[GridCell], t: float, clamp: float = R_CLAMP_KM):
    """One :class:`WindSample` per cell at hour ``t``, in the order of ``grid``."""
    if t < track.t1 - 1e-9 or t > track.t2 + 1e-9:
        raise OutOfRangeError(f"t={t} outside storm window [{track.t1}, {track.t2}]")
    cx, cy = storm_center_at(track, t)
    cells = list(grid)
    if not cells:
        return []
    centers = np.array([c.center for c in cells])
    r = np.hypot(centers[:, 0] - cx, centers[:, 1] - cy)
    v = holland_velocity(track, np.maximum(r, clamp))
    return [WindSample(cell=c.h, t=float(t), v=float(vi), r=float(ri)) for c, vi, ri in zip(cells, np.atleast_1d(v), r)]


def hourly_wind_table(track: StormTrack, grid: Sequence[GridCell], clamp: float = R_CLAMP_KM):
    """Wind speeds for every hour of the storm window.

    Returns ``(hours, cell_ids, speeds)`` where ``speeds[t_idx, cell_idx]``.
    """
    cells = list(grid)
    hours = track.hours()
    speeds = np.empty((len(hours), len(cells)))
    for n, t in enumerate(hours):
        speeds[n] = [s.v for s in wind_field_at(track, cells, t, clamp)]
    return hours, [c.h for c in cells], speeds
