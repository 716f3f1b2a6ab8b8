"""Blockage verification and the Monte-Carlo coverage engines.

Two engines share one code path: the accelerated engine verifies blockage
geometrically for towers within a horizontal cutoff and falls back to the
statistical LoS model beyond it; the traditional engine is the same run with
an infinite cutoff (every link verified exhaustively) and serves as the
accuracy oracle. Verification effort is instrumented with counters so the
cost scaling is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import lru_cache

import numpy as np

from . import geometry
from .channel import ChannelParams, LinkState, avg_received_power, coverage_from_links
from .errors import NoBasestations
from .losmodel import (
    DEFAULT_NEIGHBORHOOD_RADIUS_M,
    PolyCoeffTable,
    ab_from_stats,
    neighborhood_stats,
    p_los,
)
from .rng import derive_rng


@dataclass
class VerificationCounters:
    """Tallies of geometric work done while evaluating one or more points."""

    type1_circle_tests: int = 0
    type1_ray_casts: int = 0
    type2_building_prefilters: int = 0
    type2_edge_tests: int = 0
    a2glpm_draws: int = 0

    def merge(self, other: "VerificationCounters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the accelerated engine.

    d_th_m is the horizontal distance below which blockage is verified
    geometrically; beyond it a Bernoulli draw against the LoS probability
    decides. omega overrides the Rayleigh height scale used for the local
    terrain statistics (None estimates it from the city's buildings).
    """

    d_th_m: float = 500.0
    n_iter: int = 2000
    neighborhood_radius_m: float = DEFAULT_NEIGHBORHOOD_RADIUS_M
    seed: int = 0
    omega: float | None = None

    def __post_init__(self):
        if self.d_th_m < 0:
            raise ValueError("d_th_m must be nonnegative")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@lru_cache(maxsize=1)
def default_coeff_table() -> PolyCoeffTable:
    return PolyCoeffTable.load()


def type1_blockage(city, mrp_xy, counters: VerificationCounters | None = None) -> bool:
    """True iff the point lies inside some building footprint.

    Candidates are narrowed by each building's enclosing circle before ray
    casting; the first containing polygon short-circuits.
    """
    centers = city.building_centers
    if len(centers) == 0:
        return False
    if counters is not None:
        counters.type1_circle_tests += len(centers)
    p = np.asarray(mrp_xy, dtype=float)
    d2 = np.sum((centers - p) ** 2, axis=1)
    candidates = np.flatnonzero(d2 < city.building_radii**2)
    for idx in candidates:
        if counters is not None:
            counters.type1_ray_casts += 1
        if geometry.point_in_polygon((p[0], p[1]), city.buildings[idx].ring):
            return True
    return False


def type2_blockage(city, mrp_xy, bs, counters: VerificationCounters | None = None) -> bool:
    """True iff any building occludes the 3D link from mrp_xy to the BS.

    Assumes the point is outside every building (type-I already checked).
    Early exit on the first blocker.
    """
    seg = geometry.Segment3D(
        (mrp_xy[0], mrp_xy[1], 0.0),
        (bs.position_m[0], bs.position_m[1], bs.height_m),
    )
    for building in city.buildings:
        if geometry.segment_blocks_3d(seg, building, counters):
            return True
    return False


def _blockage_and_powers(city, mrp_xy, sim: SimConfig, ch: ChannelParams, table, rng, counters):
    """Per-BS blockage verdicts and average powers (verification phase)."""
    bs_xy = city.bs_xy
    bs_h = city.bs_heights
    p = np.asarray(mrp_xy, dtype=float)
    horiz = np.hypot(bs_xy[:, 0] - p[0], bs_xy[:, 1] - p[1])
    d3 = np.sqrt(horiz**2 + bs_h**2)

    far = horiz > sim.d_th_m
    ab = None
    if np.any(far):
        omega = sim.omega if sim.omega is not None else city.estimated_rayleigh_scale()
        stats = neighborhood_stats(city, p, sim.neighborhood_radius_m, omega)
        ab = ab_from_stats(stats, table)

    blocked = np.empty(len(bs_xy), dtype=bool)
    for i, bs in enumerate(city.basestations):
        if far[i]:
            # statistical shortcut, drawn in BS index order for reproducibility
            counters.a2glpm_draws += 1
            blocked[i] = rng.random() > p_los(ab, float(d3[i]), bs.height_m)
        else:
            blocked[i] = type2_blockage(city, p, bs, counters)

    avg = np.where(
        blocked,
        avg_received_power(ch, d3, los=False),
        avg_received_power(ch, d3, los=True),
    )
    return d3, blocked, avg


def accelerated_coverage(
    city,
    mrp_xy,
    sim: SimConfig,
    ch: ChannelParams,
    table: PolyCoeffTable | None = None,
) -> tuple[float, VerificationCounters]:
    """Coverage probability at one point via the accelerated engine.

    Returns 0 immediately for points inside a building (no fading draws).
    Otherwise: per-BS blockage (geometric within d_th_m, statistical beyond),
    strongest-average-power association (ties to the lowest BS index), then
    the shared fading loop with sim.n_iter realizations.
    """
    counters = VerificationCounters()
    if not city.basestations:
        raise NoBasestations("city has no base stations")
    if type1_blockage(city, mrp_xy, counters):
        return 0.0, counters
    if table is None:
        table = default_coeff_table()
    rng = derive_rng(sim.seed)
    d3, blocked, avg = _blockage_and_powers(city, mrp_xy, sim, ch, table, rng, counters)
    associated = int(np.argmax(avg))  # argmax returns the first (lowest-index) max
    links = [
        LinkState(distance_m=float(d), blocked=bool(b), avg_power_w=float(s))
        for d, b, s in zip(d3, blocked, avg)
    ]
    ch_iter = ch if ch.n_iter == sim.n_iter else replace(ch, n_iter=sim.n_iter)
    prob = coverage_from_links(ch_iter, links, associated, rng)
    return prob, counters


def traditional_coverage(city, mrp_xy, n_iter: int, ch: ChannelParams, seed: int) -> float:
    """Exhaustive-verification oracle: the accelerated engine with no cutoff."""
    sim = SimConfig(d_th_m=math.inf, n_iter=n_iter, seed=seed)
    prob, _ = accelerated_coverage(city, mrp_xy, sim, ch, table=None)
    return prob


def blockage_vector(
    city, mrp_xy, sim: SimConfig, ch: ChannelParams, table: PolyCoeffTable | None = None
) -> tuple[np.ndarray, VerificationCounters]:
    """Blockage verdicts only (no fading loop); used by oracle-equivalence tests."""
    counters = VerificationCounters()
    if not city.basestations:
        raise NoBasestations("city has no base stations")
    if table is None and math.isfinite(sim.d_th_m):
        table = default_coeff_table()
    rng = derive_rng(sim.seed)
    _, blocked, _ = _blockage_and_powers(city, mrp_xy, sim, ch, table, rng, counters)
    return blocked, counters
