"""Data-driven blockage weights on a square grid around the receive point.

The neighborhood is quantized into dim x dim cells holding building heights
(H) and surviving tower occupancy (B). Each cell's probability of an
unobstructed link to the center is a product of shifted-tanh terms over the
cells its sightline traverses; the scale and threshold of every term are
trained against geometrically verified blockage outcomes, with parameters
shared across the grid's eightfold symmetry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import optimize

from .channel import ChannelParams, avg_received_power, mc_sinr_coverage, noise_power
from .errors import FitDiverged, InsufficientData, NoAssociableBs
from .ingest import DEFAULT_BS_HEIGHT_M
from .rng import derive_rng
from .simcore import type1_blockage, type2_blockage

DEFAULT_GRID_DIM = 8
DEFAULT_SIDE_LENGTH_M = 235.75


@dataclass(frozen=True)
class PathStep:
    """One traversed cell on the sightline to a target cell."""

    row: int
    col: int
    t: float  # projected fraction of the way from the center to the target


@lru_cache(maxsize=8)
def grid_paths(dim: int) -> dict[tuple[int, int], tuple[PathStep, ...]]:
    """Supercover sightline from the grid center to every cell center.

    Walks the segment through the cell lattice; when it passes exactly
    through a lattice corner both corner-adjacent cells are included. The
    cell containing the start point (odd dims) is excluded, the target cell
    included. Steps are ordered by projected fraction, then row, then col.
    Exact rational arithmetic, so corner hits are detected reliably.
    """
    half = Fraction(dim, 2)
    start = (half, half)
    paths = {}
    for r in range(dim):
        for c in range(dim):
            target = (Fraction(2 * r + 1, 2), Fraction(2 * c + 1, 2))
            cells = _supercover_cells(start, target, dim)
            length2 = (target[0] - start[0]) ** 2 + (target[1] - start[1]) ** 2
            steps = []
            for rr, cc in cells:
                center = (Fraction(2 * rr + 1, 2), Fraction(2 * cc + 1, 2))
                proj = (
                    (center[0] - start[0]) * (target[0] - start[0])
                    + (center[1] - start[1]) * (target[1] - start[1])
                ) / length2
                steps.append((float(proj), rr, cc))
            steps.sort()
            paths[(r, c)] = tuple(PathStep(rr, cc, t) for t, rr, cc in steps)
    return paths


def _supercover_cells(start, target, dim):
    dr = target[0] - start[0]
    dc = target[1] - start[1]
    if dr == 0 and dc == 0:
        return []
    # crossing times of integer row/col lines, strictly inside (0, 1)
    events = {}  # t -> set of axes crossed
    for axis, (s, d) in enumerate(((start[0], dr), (start[1], dc))):
        if d == 0:
            continue
        if d > 0:
            k, step = math.floor(s) + 1, 1
        else:
            k, step = math.ceil(s) - 1, -1
        while True:
            t = (k - s) / d
            if not (0 < t < 1):
                break
            events.setdefault(t, set()).add(axis)
            k += step
    times = sorted(events)
    # sample a point inside each interval between crossings
    cuts = [Fraction(0)] + times + [Fraction(1)]
    cells = []
    seen = set()

    def cell_at(t):
        rr = math.floor(start[0] + t * dr)
        cc = math.floor(start[1] + t * dc)
        return min(max(rr, 0), dim - 1), min(max(cc, 0), dim - 1)

    # odd dims: the start point lies strictly inside a cell, which never blocks
    start_cell = None
    if start[0] % 1 != 0 and start[1] % 1 != 0:
        start_cell = (math.floor(start[0]), math.floor(start[1]))

    prev_cell = None
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if lo == hi:
            continue
        mid = (lo + hi) / 2
        cur = cell_at(mid)
        if lo in events and len(events[lo]) == 2 and prev_cell is not None:
            # corner crossing: both cells sharing only that corner count
            for extra in ((prev_cell[0], cur[1]), (cur[0], prev_cell[1])):
                if extra not in seen and extra != start_cell:
                    seen.add(extra)
                    cells.append(extra)
        if cur not in seen and cur != start_cell:
            seen.add(cur)
            cells.append(cur)
        prev_cell = cur
    return cells


_DIHEDRAL = (
    lambda r, c, n: (r, c),
    lambda r, c, n: (r, n - 1 - c),
    lambda r, c, n: (n - 1 - r, c),
    lambda r, c, n: (n - 1 - r, n - 1 - c),
    lambda r, c, n: (c, r),
    lambda r, c, n: (c, n - 1 - r),
    lambda r, c, n: (n - 1 - c, r),
    lambda r, c, n: (n - 1 - c, n - 1 - r),
)


@lru_cache(maxsize=8)
def symmetry_classes(dim: int):
    """Shared-parameter classes of (cell, path position) pairs.

    Two pairs share parameters iff a grid symmetry maps one onto the other
    (paths are equivariant under the dihedral group, including positions
    tied at equal projected fractions).

    Returns (class_of, members, t_frac): a dict (row, col, k) -> class id,
    the member list per class, and each class's projected fraction.
    """
    paths = grid_paths(dim)
    canon = {}
    for (r, c), steps in paths.items():
        for k, step in enumerate(steps):
            images = []
            for sigma in _DIHEDRAL:
                cr, cc = sigma(r, c, dim)
                pr, pc = sigma(step.row, step.col, dim)
                images.append((cr, cc, pr, pc))
            canon[(r, c, k)] = min(images)
    class_ids = {rep: i for i, rep in enumerate(sorted(set(canon.values())))}
    class_of = {key: class_ids[rep] for key, rep in canon.items()}
    members = [[] for _ in class_ids]
    t_frac = [None] * len(class_ids)
    for (r, c), steps in paths.items():
        for k, step in enumerate(steps):
            cid = class_of[(r, c, k)]
            members[cid].append((r, c, k))
            t_frac[cid] = step.t if t_frac[cid] is None else t_frac[cid]
    return class_of, tuple(tuple(m) for m in members), tuple(t_frac)


@dataclass
class GridSample:
    """Quantized neighborhood of one receive point plus association facts."""

    dim: int
    side_length_m: float
    mrp_xy: tuple[float, float]
    heights: np.ndarray  # (dim, dim) building heights at cell centers
    bs_occupancy: np.ndarray  # (dim, dim) binary, surviving towers only
    associated_index: int
    associated_distance_m: float
    associated_los: bool
    removed: tuple[tuple[float, int], ...]  # (distance, index), not associated
    survivors: tuple[tuple[int, float, int, int], ...]  # (index, distance, row, col)
    cell_multiplicity: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "dim": self.dim,
            "side_length_m": self.side_length_m,
            "mrp_xy": list(self.mrp_xy),
            "heights": [[float(v) for v in row] for row in self.heights],
            "bs_occupancy": [[int(v) for v in row] for row in self.bs_occupancy],
            "associated_index": self.associated_index,
            "associated_distance_m": self.associated_distance_m,
            "associated_los": self.associated_los,
            "removed": [[d, i] for d, i in self.removed],
            "survivors": [[i, d, r, c] for i, d, r, c in self.survivors],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "GridSample":
        return cls(
            dim=obj["dim"],
            side_length_m=obj["side_length_m"],
            mrp_xy=tuple(obj["mrp_xy"]),
            heights=np.array(obj["heights"], dtype=float),
            bs_occupancy=np.array(obj["bs_occupancy"], dtype=np.int8),
            associated_index=obj["associated_index"],
            associated_distance_m=obj["associated_distance_m"],
            associated_los=obj["associated_los"],
            removed=tuple((float(d), int(i)) for d, i in obj["removed"]),
            survivors=tuple(
                (int(i), float(d), int(r), int(c)) for i, d, r, c in obj["survivors"]
            ),
        )


def _cell_of(dim, side, mrp_xy, x, y):
    cell = side / dim
    col = int((x - (mrp_xy[0] - side / 2)) // cell)
    row = int(((mrp_xy[1] + side / 2) - y) // cell)
    if 0 <= row < dim and 0 <= col < dim:
        return row, col
    if -1 <= row <= dim and -1 <= col <= dim:
        # points exactly on the outer border snap inward
        return min(max(row, 0), dim - 1), min(max(col, 0), dim - 1)
    return None


def _cell_center_world(dim, side, mrp_xy, row, col):
    cell = side / dim
    x = mrp_xy[0] - side / 2 + (col + 0.5) * cell
    y = mrp_xy[1] + side / 2 - (row + 0.5) * cell
    return x, y


def build_matrices(
    city,
    mrp_xy,
    dim: int = DEFAULT_GRID_DIM,
    side_length_m: float = DEFAULT_SIDE_LENGTH_M,
) -> GridSample:
    """Quantize the neighborhood and associate a tower.

    Heights come from the building containing each cell center. Towers are
    removed nearest-first until one passes geometric blockage verification;
    that one associates and stays out of the occupancy matrix. Surviving
    towers inside the square are mapped to their cells. The caller must have
    excluded points inside buildings.

    Raises NoAssociableBs when every tower is blocked.
    """
    mrp = (float(mrp_xy[0]), float(mrp_xy[1]))
    heights = np.zeros((dim, dim))
    for r in range(dim):
        for c in range(dim):
            x, y = _cell_center_world(dim, side_length_m, mrp, r, c)
            idx = _containing_building(city, (x, y))
            if idx is not None:
                heights[r, c] = city.buildings[idx].height_m

    if not city.basestations:
        raise NoAssociableBs("no towers to associate")
    d3 = np.sqrt(
        np.sum((city.bs_xy - np.asarray(mrp)) ** 2, axis=1) + city.bs_heights**2
    )
    order = np.argsort(d3, kind="stable")
    removed = []
    associated = None
    for idx in order:
        bs = city.basestations[int(idx)]
        if not type2_blockage(city, mrp, bs):
            associated = int(idx)
            break
        removed.append((float(d3[idx]), int(idx)))
    if associated is None:
        raise NoAssociableBs("every tower is blocked")

    occupancy = np.zeros((dim, dim), dtype=np.int8)
    survivors = []
    multiplicity = {}
    removed_set = {i for _, i in removed} | {associated}
    half = side_length_m / 2
    for i, bs in enumerate(city.basestations):
        if i in removed_set:
            continue
        x, y = bs.position_m
        if abs(x - mrp[0]) > half or abs(y - mrp[1]) > half:
            continue  # outside the square: ignored
        cell = _cell_of(dim, side_length_m, mrp, x, y)
        if cell is None:
            continue
        occupancy[cell] = 1
        multiplicity[cell] = multiplicity.get(cell, 0) + 1
        survivors.append((i, float(d3[i]), cell[0], cell[1]))

    return GridSample(
        dim=dim,
        side_length_m=side_length_m,
        mrp_xy=mrp,
        heights=heights,
        bs_occupancy=occupancy,
        associated_index=associated,
        associated_distance_m=float(d3[associated]),
        associated_los=True,
        removed=tuple(removed),
        survivors=tuple(survivors),
        cell_multiplicity=multiplicity,
    )


def _containing_building(city, point):
    from . import geometry

    centers = city.building_centers
    if len(centers) == 0:
        return None
    d2 = np.sum((centers - np.asarray(point)) ** 2, axis=1)
    for idx in np.flatnonzero(d2 < city.building_radii**2):
        if geometry.point_in_polygon(point, city.buildings[idx].ring):
            return int(idx)
    return None


@dataclass
class WeightModel:
    """Trained tanh-product blockage weights, one (tau, h) per symmetry class."""

    dim: int
    side_length_m: float
    bs_height_m: float
    tau: np.ndarray
    threshold: np.ndarray
    class_of: dict = field(repr=False)
    training_report: dict | None = None

    @classmethod
    def initial(
        cls,
        dim: int = DEFAULT_GRID_DIM,
        side_length_m: float = DEFAULT_SIDE_LENGTH_M,
        bs_height_m: float = DEFAULT_BS_HEIGHT_M,
        tau0: float = 0.5,
    ) -> "WeightModel":
        """Untrained model: thresholds from the sightline similar triangle.

        A cell a fraction t of the way to the tower is cleared at height
        t * h_bs, which becomes its threshold's starting value.
        """
        class_of, _, t_frac = symmetry_classes(dim)
        n = len(t_frac)
        return cls(
            dim=dim,
            side_length_m=side_length_m,
            bs_height_m=bs_height_m,
            tau=np.full(n, tau0),
            threshold=np.array([t * bs_height_m for t in t_frac]),
            class_of=dict(class_of),
        )

    def save(self, path) -> None:
        _, members, _ = symmetry_classes(self.dim)
        obj = {
            "dim": self.dim,
            "L_m": self.side_length_m,
            "bs_height_m": self.bs_height_m,
            "classes": [
                {
                    "cells": [[r, c, k] for r, c, k in members[i]],
                    "tau": float(self.tau[i]),
                    "h": float(self.threshold[i]),
                }
                for i in range(len(self.tau))
            ],
        }
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "WeightModel":
        with open(path) as fh:
            obj = json.load(fh)
        tau = np.array([c["tau"] for c in obj["classes"]])
        threshold = np.array([c["h"] for c in obj["classes"]])
        class_of = {}
        for i, cl in enumerate(obj["classes"]):
            for r, c, k in cl["cells"]:
                class_of[(r, c, k)] = i
        return cls(
            dim=obj["dim"],
            side_length_m=obj["L_m"],
            bs_height_m=obj.get("bs_height_m", DEFAULT_BS_HEIGHT_M),
            tau=tau,
            threshold=threshold,
            class_of=class_of,
        )


def active_path_terms(path, heights) -> list[tuple[int, float]]:
    """(position, height) terms after duplicate-building removal.

    A positive height equal to an earlier kept height on the same path is
    the same building seen again; the term nearer the center is kept. Empty
    cells (height 0) all stay: they model independent potential blockage.
    """
    kept = []
    seen_heights = set()
    for k, step in enumerate(path):
        h = float(heights[step.row, step.col])
        if h > 0.0 and h in seen_heights:
            continue
        if h > 0.0:
            seen_heights.add(h)
        kept.append((k, h))
    return kept


def cell_weight(model: WeightModel, cell: tuple[int, int], heights) -> float:
    """Probability in (0,1) that a tower in `cell` is unobstructed."""
    path = grid_paths(model.dim)[cell]
    w = 1.0
    for k, h in active_path_terms(path, heights):
        cid = model.class_of[(cell[0], cell[1], k)]
        w *= 0.5 - 0.5 * math.tanh(model.tau[cid] * (h - model.threshold[cid]))
    return w


@dataclass(frozen=True)
class MlTrainConfig:
    bs_height_m: float = DEFAULT_BS_HEIGHT_M
    tau0: float = 0.5
    tau_bounds: tuple[float, float] = (1e-3, 10.0)
    threshold_bounds: tuple[float, float] = (0.0, 300.0)
    max_nfev: int | None = None


def train_weights(samples, labels, cfg: MlTrainConfig | None = None) -> WeightModel:
    """Fit tau and thresholds to verified line-of-sight outcomes.

    Each observation is one surviving in-square tower of one sample with a
    0/1 label (1 = unobstructed, geometrically verified); minimizing squared
    loss drives each cell weight to the empirical unblocked proportion for
    its terrain configuration. Raises InsufficientData when some symmetry
    class never occurs in the data.
    """
    cfg = cfg or MlTrainConfig()
    if not samples:
        raise InsufficientData("no samples")
    dim = samples[0].dim
    side = samples[0].side_length_m
    paths = grid_paths(dim)
    class_of, members, t_frac = symmetry_classes(dim)
    n_classes = len(members)

    term_class = []
    term_height = []
    obs_sizes = []
    y = []
    for sample, obs_labels in zip(samples, labels):
        if sample.dim != dim or sample.side_length_m != side:
            raise ValueError("mixed grid geometries in one training set")
        if len(obs_labels) != len(sample.survivors):
            raise ValueError("labels must align with the sample's survivors")
        for (idx, dist, r, c), bit in zip(sample.survivors, obs_labels):
            terms = active_path_terms(paths[(r, c)], sample.heights)
            obs_sizes.append(len(terms))
            y.append(float(bit))
            for k, h in terms:
                term_class.append(class_of[(r, c, k)])
                term_height.append(h)
    if not y:
        raise InsufficientData("no surviving-tower observations in the corpus")

    term_class = np.array(term_class, dtype=np.intp)
    term_height = np.array(term_height)
    y = np.array(y)
    offsets = np.concatenate(([0], np.cumsum(obs_sizes)))[:-1]
    covered = np.unique(term_class)
    if len(covered) < n_classes:
        missing = sorted(set(range(n_classes)) - set(covered.tolist()))
        raise InsufficientData(
            f"{len(missing)} symmetry classes have no observations: {missing[:8]}..."
        )

    x0 = np.concatenate(
        [np.full(n_classes, cfg.tau0), [t * cfg.bs_height_m for t in t_frac]]
    )
    lb = np.concatenate(
        [np.full(n_classes, cfg.tau_bounds[0]), np.full(n_classes, cfg.threshold_bounds[0])]
    )
    ub = np.concatenate(
        [np.full(n_classes, cfg.tau_bounds[1]), np.full(n_classes, cfg.threshold_bounds[1])]
    )

    def resid(x):
        tau = x[:n_classes][term_class]
        thr = x[n_classes:][term_class]
        terms = 0.5 - 0.5 * np.tanh(tau * (term_height - thr))
        w = np.multiply.reduceat(terms, offsets)
        return w - y

    res = optimize.least_squares(
        resid, x0=x0, bounds=(lb, ub), method="trf", max_nfev=cfg.max_nfev
    )
    if not res.success:
        raise FitDiverged(f"weight training failed: {res.message}")

    per_class_count = np.bincount(term_class, minlength=n_classes)
    model = WeightModel(
        dim=dim,
        side_length_m=side,
        bs_height_m=cfg.bs_height_m,
        tau=res.x[:n_classes].copy(),
        threshold=res.x[n_classes:].copy(),
        class_of=dict(class_of),
        training_report={
            "n_observations": int(len(y)),
            "final_cost": float(res.cost),
            "mean_abs_residual": float(np.mean(np.abs(res.fun))),
            "class_term_counts": per_class_count.tolist(),
        },
    )
    return model


def ml_coverage(
    sample: GridSample,
    model: WeightModel,
    ch: ChannelParams,
    n_iter: int,
    seed: int,
) -> float:
    """Coverage at the sample's point using trained blockage weights.

    Towers fall into four groups: the associated one (unobstructed by
    construction), removed-but-not-associated ones (blocked), surviving
    in-square ones whose blockage is redrawn each fading realization with
    probability 1 - w(cell), and out-of-square ones (ignored). Separate
    derived streams drive the state draws and the fading so degenerate
    weights reduce exactly to a fixed-state run.
    """
    state_rng = derive_rng(seed, 1)
    fade_rng = derive_rng(seed, 2)

    dists = [sample.associated_distance_m]
    dists += [d for d, _ in sample.removed]
    dists += [d for _, d, _, _ in sample.survivors]
    n_links = len(dists)
    n_rem = len(sample.removed)
    n_sur = len(sample.survivors)

    avg = np.empty((n_iter, n_links))
    m = np.empty((n_iter, n_links))
    avg[:, 0] = avg_received_power(ch, sample.associated_distance_m, los=True)
    m[:, 0] = ch.nakagami_m_los
    for j, (d, _) in enumerate(sample.removed):
        avg[:, 1 + j] = avg_received_power(ch, d, los=False)
        m[:, 1 + j] = ch.nakagami_m_nlos
    if n_sur:
        w = np.array(
            [cell_weight(model, (r, c), sample.heights) for _, _, r, c in sample.survivors]
        )
        d_sur = np.array([d for _, d, _, _ in sample.survivors])
        blocked = state_rng.random((n_iter, n_sur)) >= w
        los_p = avg_received_power(ch, d_sur, los=True)
        nlos_p = avg_received_power(ch, d_sur, los=False)
        avg[:, 1 + n_rem :] = np.where(blocked, nlos_p, los_p)
        m[:, 1 + n_rem :] = np.where(blocked, ch.nakagami_m_nlos, ch.nakagami_m_los)

    return mc_sinr_coverage(
        avg,
        m,
        0,
        noise_power(ch),
        ch.sinr_threshold_linear,
        n_iter,
        fade_rng,
    )


# --- corpus construction and persistence ---


def verified_labels(city, sample: GridSample) -> list[int]:
    """Geometric LoS bit for every surviving in-square tower."""
    out = []
    for idx, _, _, _ in sample.survivors:
        bs = city.basestations[idx]
        out.append(0 if type2_blockage(city, sample.mrp_xy, bs) else 1)
    return out


def build_training_set(
    cities,
    n_samples: int,
    dim: int = DEFAULT_GRID_DIM,
    side_length_m: float = DEFAULT_SIDE_LENGTH_M,
    seed: int = 0,
):
    """Sample receive points across cities and label their grid samples.

    Points inside buildings and points with no associable tower are skipped
    (the latter are excluded from training by design). Returns (samples,
    labels) lists.
    """
    rng = derive_rng(seed, 0xDA7A)
    samples = []
    labels = []
    attempts = 0
    max_attempts = 50 * n_samples + 100
    while len(samples) < n_samples and attempts < max_attempts:
        attempts += 1
        city = cities[int(rng.integers(len(cities)))]
        b = city.bounds
        mrp = (float(rng.uniform(b.xmin, b.xmax)), float(rng.uniform(b.ymin, b.ymax)))
        if type1_blockage(city, mrp):
            continue
        try:
            sample = build_matrices(city, mrp, dim, side_length_m)
        except NoAssociableBs:
            continue
        samples.append(sample)
        labels.append(verified_labels(city, sample))
    if len(samples) < n_samples:
        raise InsufficientData(
            f"could only draw {len(samples)}/{n_samples} usable samples"
        )
    return samples, labels


def save_corpus(path, samples, labels) -> None:
    """One JSON object per line: the sample plus its survivor labels."""
    with open(path, "w") as fh:
        for sample, obs in zip(samples, labels):
            rec = {"sample": sample.to_json_obj(), "labels": [int(v) for v in obs]}
            fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=True))
            fh.write("\n")


def load_corpus(path):
    samples = []
    labels = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append(GridSample.from_json_obj(rec["sample"]))
            labels.append(rec["labels"])
    return samples, labels
