"""Wind-driven NHPP line-failure model and failure-scenario sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, MissingDataError, ScenarioShortfallError


@dataclass(frozen=True)
class NhppParams:
    alpha: float = 4175.6
    v_crit: float = 20.6          # m/s
    lambda_norm: float = 3.5e-5   # failures / hr / km

    def __post_init__(self):
        if not (self.alpha > 0 and self.v_crit > 0 and self.lambda_norm > 0):
            raise InputError("NHPP parameters must all be positive")


@dataclass(frozen=True)
class LineIntensity:
    edge: object
    lambda_e: float
    p_e: float


@dataclass(frozen=True)
class FailureScenario:
    """Binary failure vector (1 = line failed) with its probability."""

    bits: tuple
    prob: float = 1.0

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise InputError("scenario bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    @property
    def n_failed(self) -> int:
        return sum(self.bits)

    def failed(self, edge_ids: Sequence) -> list:
        if len(edge_ids) != len(self.bits):
            raise InputError(f"scenario has {len(self.bits)} bits for {len(edge_ids)} edges")
        return [e for e, b in zip(edge_ids, self.bits) if b]

    @classmethod
    def from_failed(cls, edge_ids: Sequence, failed, p=None) -> "FailureScenario":
        failed = set(failed)
        unknown = failed - set(edge_ids)
        if unknown:
            raise InputError(f"unknown edges in failure set: {sorted(map(str, unknown))}")
        bits = tuple(int(e in failed) for e in edge_ids)
        prob = scenario_probability(bits, p) if p is not None else 1.0
        return cls(bits, prob)


def poisson_rate(v, params: NhppParams = NhppParams()):
    """Hourly failure rate per km for wind speed ``v`` (scalar or array)."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise InputError("wind speed must be non-negative")
    quad = (1.0 + params.alpha * ((v_arr / params.v_crit) ** 2 - 1.0)) * params.lambda_norm
    rate = np.where(v_arr < params.v_crit, params.lambda_norm, quad)
    return float(rate) if rate.ndim == 0 else rate


def cell_cumulative_intensity(rates) -> float:
    """Hourly sum of a cell's rates over the storm window (per km)."""
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise InputError("rate list for a cell is empty")
    if np.any(r < 0):
        raise InputError("rates must be non-negative")
    return float(np.sum(r))


def line_cumulative_intensity(lengths: Mapping, cell_intensity: Mapping) -> float:
    total = 0.0
    for h, length in lengths.items():
        if length < 0:
            raise InputError(f"negative length {length} in cell {h}")
        if h not in cell_intensity:
            raise MissingDataError(f"no cumulative intensity for cell {h}")
        total += length * cell_intensity[h]
    return total


def line_failure_probability(lambda_e):
    lam = np.asarray(lambda_e, dtype=float)
    if np.any(lam < 0):
        raise InputError("cumulative intensity must be non-negative")
    p = -np.expm1(-lam)
    return float(p) if p.ndim == 0 else p


def scenario_probability(bits, p) -> float:
    s = np.asarray(bits, dtype=float)
    p = np.asarray(p, dtype=float)
    if s.shape != p.shape:
        raise InputError(f"scenario has {s.size} entries but {p.size} probabilities were given")
    if np.any((p < 0) | (p > 1)):
        raise InputError("edge probabilities must lie in [0, 1]")
    return float(np.prod(s * p + (1.0 - s) * (1.0 - p)))


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def worker_seeds(master_seed: int, n: int) -> list:
    """Independent child seeds for parallel workers.

    Child ``i`` is the first 64-bit word of ``SeedSequence(master_seed).spawn(n)[i]``,
    so the mapping depends only on the master seed and the worker index.
    """
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def sample_scenario(p, rng: np.random.Generator) -> FailureScenario:
    p = np.asarray(p, dtype=float)
    bits = (rng.random(p.size) < p).astype(int)
    return FailureScenario(tuple(bits.tolist()), scenario_probability(bits, p))


def sample_bits(p, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent scenarios as an (n, |E|) 0/1 array."""
    p = np.asarray(p, dtype=float)
    return (rng.random((n, p.size)) < p).astype(np.int8)


def select_scenarios(p, rng: np.random.Generator, n_samples: int = 1000, top: int = 100,
                     subset_size: int = 10) -> list:
    """Draw scenarios, keep the ``top`` most probable distinct ones and pick a random subset.

    The returned list is ordered by decreasing probability.
    """
    if not (1 <= subset_size <= top <= n_samples):
        raise InputError("need 1 <= subset_size <= top <= n_samples")
    p = np.asarray(p, dtype=float)
    draws = sample_bits(p, rng, n_samples)
    seen = {}
    for row in draws:
        key = tuple(int(b) for b in row)
        if key not in seen:
            seen[key] = scenario_probability(key, p)
    # stable sort keeps first-seen order among equal probabilities
    ranked = sorted(seen.items(), key=lambda kv: -kv[1])[:top]
    if len(ranked) < subset_size:
        raise ScenarioShortfallError(subset_size, len(ranked))
    pick = np.sort(rng.choice(len(ranked), size=subset_size, replace=False))
    return [FailureScenario(ranked[i][0], ranked[i][1]) for i in pick]


def line_intensities(edge_ids, edge_cell_lengths: Mapping, cell_intensity: Mapping) -> list:
    out = []
    for e in edge_ids:
        lam = line_cumulative_intensity(edge_cell_lengths[e], cell_intensity)
        out.append(LineIntensity(e, lam, line_failure_probability(lam)))
    return out


def cell_intensities(cell_ids, speeds: np.ndarray, params: NhppParams = NhppParams()) -> dict:
    """Cumulative intensity per cell from an (hours, cells) speed table."""
    rates = poisson_rate(speeds, params)
    rates = np.atleast_2d(rates)
    return {h: cell_cumulative_intensity(rates[:, j]) for j, h in enumerate(cell_ids)}
