"""City models: building footprints with heights plus base-station positions.

Buildings come from a JSON file of rings, base stations from a CSV; both can
also be generated synthetically. All coordinates are planar meters (any
lat/lon projection happens outside this package); the ground is flat at z=0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import geometry
from .errors import EmptyCity, InfeasibleDensity, MalformedRing, NegativeHeight
from .rng import derive_rng

DEFAULT_BS_HEIGHT_M = 20.0

# snap distance for almost-closed rings in input files
RING_CLOSE_TOL_M = 1e-6


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("bounds must have positive extent")

    @property
    def width_m(self) -> float:
        return self.xmax - self.xmin

    @property
    def height_m(self) -> float:
        return self.ymax - self.ymin

    @property
    def area_m2(self) -> float:
        return self.width_m * self.height_m

    @property
    def area_km2(self) -> float:
        return self.area_m2 * 1e-6

    def contains(self, x: float, y: float, tol: float = 1e-9) -> bool:
        return (
            self.xmin - tol <= x <= self.xmax + tol
            and self.ymin - tol <= y <= self.ymax + tol
        )


@dataclass(frozen=True)
class BuildingSpec:
    """One building: closed clockwise ring, roof height, derived geometry."""

    ring: tuple[tuple[float, float], ...]
    height_m: float
    center_m: tuple[float, float]
    radius_m: float
    area_m2: float

    @classmethod
    def from_ring(cls, ring, height_m: float) -> "BuildingSpec":
        """Validate and normalize a ring, then derive circle and area.

        Counterclockwise input is reoriented clockwise. The ring must already
        be closed; use `close_ring` for raw file input.
        """
        pts = [(float(x), float(y)) for x, y in ring]
        geometry.check_closed_ring(pts)
        if len(dict.fromkeys(pts[:-1])) < 3:
            raise MalformedRing("fewer than 3 distinct vertices")
        if float(height_m) < 0.0:
            raise NegativeHeight(f"height {height_m} < 0")
        if not geometry.ring_is_simple(pts):
            raise MalformedRing("ring is self-intersecting")
        area = geometry.polygon_area(pts)
        if area <= 0.0:
            raise MalformedRing("degenerate ring with zero area")
        if geometry.signed_ring_area(pts) > 0.0:
            pts = pts[::-1]
        circle = geometry.min_enclosing_circle(pts[:-1])
        return cls(
            ring=tuple(pts),
            height_m=float(height_m),
            center_m=circle.center,
            radius_m=circle.radius,
            area_m2=area,
        )


@dataclass(frozen=True)
class BasestationSpec:
    position_m: tuple[float, float]
    height_m: float = DEFAULT_BS_HEIGHT_M

    def __post_init__(self):
        if self.height_m <= 0.0:
            raise ValueError("base-station height must be positive")


@dataclass(frozen=True)
class CityModel:
    """Immutable map of buildings and base stations, safe to share."""

    buildings: tuple[BuildingSpec, ...]
    basestations: tuple[BasestationSpec, ...]
    bounds: Bounds

    def __post_init__(self):
        if not self.buildings and not self.basestations:
            raise EmptyCity("no buildings and no base stations")
        for b in self.buildings:
            for x, y in b.ring:
                if not self.bounds.contains(x, y):
                    raise ValueError("building vertex outside bounds")
        for s in self.basestations:
            if not self.bounds.contains(*s.position_m):
                raise ValueError("base station outside bounds")

    # cached numpy views shared by the hot paths

    @cached_property
    def building_centers(self) -> np.ndarray:
        if not self.buildings:
            return np.empty((0, 2))
        return np.array([b.center_m for b in self.buildings])

    @cached_property
    def building_radii(self) -> np.ndarray:
        return np.array([b.radius_m for b in self.buildings])

    @cached_property
    def building_heights(self) -> np.ndarray:
        return np.array([b.height_m for b in self.buildings])

    @cached_property
    def building_areas(self) -> np.ndarray:
        return np.array([b.area_m2 for b in self.buildings])

    @cached_property
    def bs_xy(self) -> np.ndarray:
        if not self.basestations:
            return np.empty((0, 2))
        return np.array([s.position_m for s in self.basestations])

    @cached_property
    def bs_heights(self) -> np.ndarray:
        return np.array([s.height_m for s in self.basestations])

    def estimated_rayleigh_scale(self, default: float = 10.0) -> float:
        """Max-likelihood Rayleigh scale of the building heights."""
        if not self.buildings:
            return default
        h = self.building_heights
        est = math.sqrt(float(np.sum(h * h)) / (2 * len(h)))
        return est if est > 0.0 else default


@dataclass(frozen=True)
class SynthCityConfig:
    bounds: Bounds
    building_density_per_km2: float = 200.0
    built_area_ratio: float = 0.15
    rayleigh_scale: float = 12.0
    bs_density_per_km2: float = 50.0
    bs_height_m: float = DEFAULT_BS_HEIGHT_M
    aspect_range: tuple[float, float] = (0.5, 2.0)
    area_jitter: float = 0.4
    max_place_tries: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.building_density_per_km2 < 0 or self.bs_density_per_km2 < 0:
            raise ValueError("densities must be nonnegative")
        if self.rayleigh_scale <= 0:
            raise ValueError("rayleigh scale must be positive")
        if not (0.0 <= self.built_area_ratio < 1.0):
            raise ValueError("built-area ratio must be in [0,1)")


@dataclass(frozen=True)
class LoadDefaults:
    bs_height_m: float = DEFAULT_BS_HEIGHT_M
    missing_height_scale: float = 10.0  # Rayleigh scale for absent height fields
    seed: int = 0
    bounds: Bounds | None = None


def close_ring(raw) -> list[tuple[float, float]]:
    """Snap an almost-closed ring shut, or reject it."""
    pts = [(float(x), float(y)) for x, y in raw]
    if len(pts) < 3:
        raise MalformedRing("fewer than 3 vertices")
    if pts[0] != pts[-1]:
        gap = math.hypot(pts[0][0] - pts[-1][0], pts[0][1] - pts[-1][1])
        if gap <= RING_CLOSE_TOL_M:
            pts[-1] = pts[0]
        else:
            raise MalformedRing(f"ring not closed (gap {gap:g} m)")
    return pts


def _tight_bounds(buildings, basestations) -> Bounds:
    xs, ys = [], []
    for b in buildings:
        for x, y in b.ring:
            xs.append(x)
            ys.append(y)
    for s in basestations:
        xs.append(s.position_m[0])
        ys.append(s.position_m[1])
    if not xs:
        raise EmptyCity("no geometry to derive bounds from")
    pad = 1.0
    return Bounds(min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)


def load_city(buildings_path, bs_path, defaults: LoadDefaults | None = None) -> CityModel:
    """Load a city from a buildings JSON file and a base-station CSV."""
    defaults = defaults or LoadDefaults()
    with open(buildings_path) as fh:
        raw = json.load(fh)
    rng = derive_rng(defaults.seed, 0xB11D)
    buildings = []
    for entry in raw:
        ring = close_ring(entry["ring"])
        height = entry.get("height")
        if height is None:
            height = float(rng.rayleigh(defaults.missing_height_scale))
        buildings.append(BuildingSpec.from_ring(ring, height))

    basestations = []
    with open(bs_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            height = row.get("height")
            h = float(height) if height not in (None, "") else defaults.bs_height_m
            basestations.append(
                BasestationSpec(position_m=(float(row["x"]), float(row["y"])), height_m=h)
            )

    bounds = defaults.bounds or _tight_bounds(buildings, basestations)
    return CityModel(tuple(buildings), tuple(basestations), bounds)


def write_city(city: CityModel, buildings_path, bs_path) -> None:
    """Write the load_city formats back out, bit-stably for equal inputs."""
    entries = [
        {"ring": [[x, y] for x, y in b.ring], "height": b.height_m}
        for b in city.buildings
    ]
    with open(buildings_path, "w") as fh:
        json.dump(entries, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")
    with open(bs_path, "w", newline="") as fh:
        fh.write("x,y,height\n")
        for s in city.basestations:
            fh.write(f"{s.position_m[0]!r},{s.position_m[1]!r},{s.height_m!r}\n")


def _rect_ring(cx, cy, hw, hh):
    # clockwise rectangle
    return (
        (cx - hw, cy - hh),
        (cx - hw, cy + hh),
        (cx + hw, cy + hh),
        (cx + hw, cy - hh),
        (cx - hw, cy - hh),
    )


def generate_city(config: SynthCityConfig) -> CityModel:
    """Synthesize a city: homogeneous building and BS point processes.

    Building centers follow a Poisson process of the requested intensity;
    axis-aligned rectangular footprints are sized so the realized built-area
    ratio matches the target, redrawn on overlap. Heights are i.i.d.
    Rayleigh. Fully determined by the seed.
    """
    rng = derive_rng(config.seed)
    b = config.bounds
    n_buildings = int(rng.poisson(config.building_density_per_km2 * b.area_km2))

    buildings: list[BuildingSpec] = []
    placed_aabbs: list[tuple[float, float, float, float]] = []
    if n_buildings > 0 and config.built_area_ratio > 0.0:
        jitter = rng.uniform(1.0 - config.area_jitter, 1.0 + config.area_jitter, n_buildings)
        areas = jitter * (config.built_area_ratio * b.area_m2) / jitter.sum()
        heights = rng.rayleigh(config.rayleigh_scale, n_buildings)
        for i in range(n_buildings):
            placed = False
            for _ in range(config.max_place_tries):
                aspect = rng.uniform(*config.aspect_range)
                hw = math.sqrt(areas[i] * aspect) / 2.0
                hh = areas[i] / (4.0 * hw)
                if 2 * hw >= b.width_m or 2 * hh >= b.height_m:
                    continue
                cx = rng.uniform(b.xmin + hw, b.xmax - hw)
                cy = rng.uniform(b.ymin + hh, b.ymax - hh)
                box = (cx - hw, cy - hh, cx + hw, cy + hh)
                if any(
                    box[0] < o[2] and box[2] > o[0] and box[1] < o[3] and box[3] > o[1]
                    for o in placed_aabbs
                ):
                    continue
                placed_aabbs.append(box)
                buildings.append(
                    BuildingSpec.from_ring(_rect_ring(cx, cy, hw, hh), heights[i])
                )
                placed = True
                break
            if not placed:
                raise InfeasibleDensity(
                    f"could not place building {i + 1}/{n_buildings} "
                    f"after {config.max_place_tries} tries"
                )

    n_bs = int(rng.poisson(config.bs_density_per_km2 * b.area_km2))
    basestations = tuple(
        BasestationSpec(
            position_m=(rng.uniform(b.xmin, b.xmax), rng.uniform(b.ymin, b.ymax)),
            height_m=config.bs_height_m,
        )
        for _ in range(n_bs)
    )
    return CityModel(tuple(buildings), basestations, b)


def resample_heights(city: CityModel, rayleigh_scale: float, seed: int) -> CityModel:
    """Same footprints, fresh i.i.d. Rayleigh heights; the input is untouched."""
    if rayleigh_scale <= 0.0:
        raise ValueError("rayleigh scale must be positive")
    rng = derive_rng(seed, 0x4E16)
    heights = rng.rayleigh(rayleigh_scale, len(city.buildings))
    new_buildings = tuple(
        replace(b, height_m=float(h)) for b, h in zip(city.buildings, heights)
    )
    return CityModel(new_buildings, city.basestations, city.bounds)
