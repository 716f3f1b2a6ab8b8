"""Neighborhood terrain statistics and the elevation-angle LoS model.

The probability that a ground-to-tower link is unobstructed is a sigmoid in
the elevation angle with two terrain parameters (a, b). Those parameters are
polynomial functions of the local built-area ratio, building density and
height scale, evaluated over a circular neighborhood around the receive
point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DistanceBelowHeight, NonpositiveParameter

DEFAULT_NEIGHBORHOOD_RADIUS_M = 50.0

POLY_DEGREE = 3  # terms (kappa*iota)^i * omega^j with i + j <= 3


@dataclass(frozen=True)
class NeighborhoodStats:
    """Terrain summary of the circular neighborhood around a receive point."""

    kappa: float  # built-area ratio, clamped to [0, 1]
    iota: float  # buildings per km^2
    omega: float  # Rayleigh scale of building heights
    radius_m: float

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("neighborhood radius must be positive")
        if self.iota < 0 or not (0.0 <= self.kappa <= 1.0):
            raise ValueError("invalid neighborhood statistics")


@dataclass(frozen=True)
class A2glpmParams:
    """Sigmoid LoS-probability parameters; both must be positive."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise NonpositiveParameter(f"a={self.a}, b={self.b}")


@dataclass(frozen=True)
class ScenarioAnchor:
    """Reference terrain class with its known (a, b) pair."""

    name: str
    kappa: float
    iota_per_km2: float
    omega: float
    a: float
    b: float


@dataclass(frozen=True)
class PolyCoeffTable:
    """Two triangular coefficient sets mapping terrain stats to (a, b).

    Each polynomial is sum_{i+j<=3} C[i,j] * (kappa*iota)^i * omega^j with
    iota in buildings per km^2.
    """

    coeff_a: tuple[tuple[tuple[int, int], float], ...]
    coeff_b: tuple[tuple[tuple[int, int], float], ...]
    anchors: tuple[ScenarioAnchor, ...] = ()

    def _eval(self, coeffs, u: float, omega: float) -> float:
        return sum(c * (u**i) * (omega**j) for (i, j), c in coeffs)

    def evaluate_a(self, u: float, omega: float) -> float:
        return self._eval(self.coeff_a, u, omega)

    def evaluate_b(self, u: float, omega: float) -> float:
        return self._eval(self.coeff_b, u, omega)

    @staticmethod
    def _parse_coeffs(obj: dict) -> tuple:
        parsed = {}
        for key, val in obj.items():
            i, j = (int(t) for t in key.strip("() ").split(","))
            if i < 0 or j < 0 or i + j > POLY_DEGREE:
                raise ValueError(f"coefficient index {key} outside the triangle")
            parsed[(i, j)] = float(val)
        return tuple(sorted(parsed.items()))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PolyCoeffTable":
        anchors = tuple(
            ScenarioAnchor(
                name=a["name"],
                kappa=float(a["kappa"]),
                iota_per_km2=float(a["iota_per_km2"]),
                omega=float(a["omega"]),
                a=float(a["a"]),
                b=float(a["b"]),
            )
            for a in obj.get("anchors", ())
        )
        table = cls(
            coeff_a=cls._parse_coeffs(obj["a"]),
            coeff_b=cls._parse_coeffs(obj["b"]),
            anchors=anchors,
        )
        for anc in anchors:
            u = anc.kappa * anc.iota_per_km2
            if table.evaluate_a(u, anc.omega) <= 0 or table.evaluate_b(u, anc.omega) <= 0:
                raise NonpositiveParameter(
                    f"table evaluates nonpositive on anchor {anc.name!r}"
                )
        return table

    @classmethod
    def load(cls, path=None) -> "PolyCoeffTable":
        """Load a table from a JSON file, or the packaged fallback table."""
        if path is None:
            text = (
                resources.files("covmanifold").joinpath("data/a2glpm_coeffs.json").read_text()
            )
            return cls.from_json_obj(json.loads(text))
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))

    def to_json_obj(self) -> dict:
        return {
            "a": {f"({i},{j})": c for (i, j), c in self.coeff_a},
            "b": {f"({i},{j})": c for (i, j), c in self.coeff_b},
            "anchors": [
                {
                    "name": a.name,
                    "kappa": a.kappa,
                    "iota_per_km2": a.iota_per_km2,
                    "omega": a.omega,
                    "a": a.a,
                    "b": a.b,
                }
                for a in self.anchors
            ],
        }


def neighborhood_stats(city, mrp_xy, radius_m: float, omega: float) -> NeighborhoodStats:
    """Built-area ratio and building density in the circle around mrp_xy.

    A building belongs to the neighborhood iff its center lies strictly
    inside the circle; its whole floor area then counts (edge effects are
    ignored). Empty neighborhoods yield kappa = iota = 0.
    """
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    area_m2 = math.pi * radius_m * radius_m
    centers = city.building_centers
    if len(centers) == 0:
        return NeighborhoodStats(0.0, 0.0, omega, radius_m)
    d2 = np.sum((centers - np.asarray(mrp_xy)) ** 2, axis=1)
    mask = d2 < radius_m * radius_m
    kappa = min(float(city.building_areas[mask].sum()) / area_m2, 1.0)
    iota = float(mask.sum()) / (area_m2 * 1e-6)
    return NeighborhoodStats(kappa, iota, omega, radius_m)


def ab_from_stats(stats: NeighborhoodStats, table: PolyCoeffTable) -> A2glpmParams:
    """Evaluate both terrain polynomials at (kappa*iota, omega)."""
    u = stats.kappa * stats.iota
    a = table.evaluate_a(u, stats.omega)
    b = table.evaluate_b(u, stats.omega)
    if a <= 0 or b <= 0:
        raise NonpositiveParameter(
            f"polynomial gave a={a:.4g}, b={b:.4g} at u={u:.4g}, omega={stats.omega:.4g}"
        )
    return A2glpmParams(a, b)


def p_los(params: A2glpmParams, d_m, h_bs_m: float):
    """LoS probability of a link of 3D length d_m to a tower of height h_bs_m.

    1 / (1 + a*exp(-b*(theta_deg - a))) with theta the elevation angle in
    degrees; at d == h_bs the angle is 90 degrees. Accepts scalars or arrays.
    """
    if h_bs_m <= 0:
        raise ValueError("tower height must be positive")
    d = np.asarray(d_m, dtype=float)
    if np.any(d < h_bs_m * (1.0 - 1e-12)):
        raise DistanceBelowHeight("3D distance below tower height")
    horiz = np.sqrt(np.maximum(d * d - h_bs_m * h_bs_m, 0.0))
    theta_deg = np.degrees(np.arctan2(h_bs_m, horiz))
    z = np.clip(-params.b * (theta_deg - params.a), -700.0, 700.0)
    out = 1.0 / (1.0 + params.a * np.exp(z))
    return float(out) if np.isscalar(d_m) else out
