"""Stochastic-geometry coverage: exact integrals, closed form, and training.

Under the symmetric scenario (towers as a homogeneous planar point process,
independent per-link LoS marks, independent fading) the coverage probability
has an exact double-integral expression. A two-term closed form
c1*lam*c2^lam + c3*lam*c4^lam is fitted against simulation per terrain pair
and stored in a database, turning per-point evaluation into a lookup plus
arithmetic.

Densities are per square meter everywhere except `closed_form_coverage` and
the database grid, which use per square kilometer so the c^lam bases stay
well conditioned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import integrate, optimize

from .channel import ChannelParams, noise_power
from .errors import (
    ArgmaxNotFound,
    EmptyDatabase,
    FitDiverged,
    OutOfRange,
    QuadratureFailure,
    Unsatisfiable,
)
from .ingest import DEFAULT_BS_HEIGHT_M
from .losmodel import A2glpmParams, ab_from_stats, neighborhood_stats, p_los
from .rng import derive_rng, derive_seed
from .simcore import default_coeff_table, type1_blockage

PER_KM2_TO_PER_M2 = 1e-6

_GRID_N = 16384


@dataclass(frozen=True)
class SgCoefficients:
    """Closed-form coverage coefficients for one terrain pair."""

    a: float
    b: float
    c1: float
    c2: float
    c3: float
    c4: float
    residual: float | None = None

    def __post_init__(self):
        if not (0.0 < self.c2 <= 1.0 and 0.0 < self.c4 <= 1.0):
            raise ValueError("c2 and c4 must lie in (0, 1]")


@dataclass(frozen=True)
class BFitCurve:
    """Modified sigmoid b(a) = p1 + p2 / (1 + exp(p3*(a - p4)))."""

    p1: float
    p2: float
    p3: float
    p4: float

    def __call__(self, a):
        z = np.clip(self.p3 * (np.asarray(a, dtype=float) - self.p4), -700, 700)
        out = self.p1 + self.p2 / (1.0 + np.exp(z))
        return float(out) if np.isscalar(a) else out


@dataclass(frozen=True)
class CoefficientDb:
    entries: tuple[SgCoefficients, ...]
    curve: BFitCurve | None = None
    lambda_grid_per_km2: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.entries:
            raise EmptyDatabase("database needs at least one entry")
        pairs = [(e.a, e.b) for e in self.entries]
        if len(set(pairs)) != len(pairs):
            raise ValueError("(a, b) pairs must be distinct")

    def nearest(self, a: float, b: float) -> tuple[int, SgCoefficients]:
        """Entry minimizing |a_i - a|/a + |b_i - b|/b; ties to the lower index."""
        avals = np.array([e.a for e in self.entries])
        bvals = np.array([e.b for e in self.entries])
        dev = np.abs(avals - a) / a + np.abs(bvals - b) / b
        idx = int(np.argmin(dev))
        return idx, self.entries[idx]

    def to_json_obj(self) -> dict:
        obj = {
            "lambda_grid_per_km2": list(self.lambda_grid_per_km2),
            "entries": [
                {
                    "a": e.a,
                    "b": e.b,
                    "c1": e.c1,
                    "c2": e.c2,
                    "c3": e.c3,
                    "c4": e.c4,
                    "residual": e.residual,
                }
                for e in self.entries
            ],
        }
        if self.curve is not None:
            obj["curve"] = {
                "p1": self.curve.p1,
                "p2": self.curve.p2,
                "p3": self.curve.p3,
                "p4": self.curve.p4,
            }
        return obj

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CoefficientDb":
        curve = None
        if "curve" in obj:
            c = obj["curve"]
            curve = BFitCurve(c["p1"], c["p2"], c["p3"], c["p4"])
        entries = tuple(
            SgCoefficients(
                a=e["a"],
                b=e["b"],
                c1=e["c1"],
                c2=e["c2"],
                c3=e["c3"],
                c4=e["c4"],
                residual=e.get("residual"),
            )
            for e in obj["entries"]
        )
        return cls(entries, curve, tuple(obj.get("lambda_grid_per_km2", ())))

    @classmethod
    def load(cls, path) -> "CoefficientDb":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))


def seed_database() -> CoefficientDb:
    """The packaged database with the four standard scenario rows."""
    text = resources.files("covmanifold").joinpath("data/sg_seed_db.json").read_text()
    return CoefficientDb.from_json_obj(json.loads(text))


@dataclass(frozen=True)
class SgTrainConfig:
    ab_pairs: tuple[tuple[float, float], ...] | None = None
    n_ab: int = 128
    a_range: tuple[float, float] = (4.0, 30.0)
    lambda_grid_per_km2: tuple[float, ...] = (2.0, 5.0, 10.0, 20.0, 50.0)
    n_iter: int = 10_000
    eps1: float = 0.05
    eps2: float = 0.1
    eps3: float = 0.01
    r_max_fixed_m: float | None = None
    bs_height_m: float = DEFAULT_BS_HEIGHT_M
    seed: int = 0

    def __post_init__(self):
        grid = self.lambda_grid_per_km2
        if not grid or any(g <= 0 for g in grid) or list(grid) != sorted(grid):
            raise ValueError("lambda grid must be positive and ascending")
        for eps in (self.eps1, self.eps2, self.eps3):
            if not (0.0 < eps < 1.0):
                raise ValueError("epsilons must be in (0, 1)")


def default_ab_anchors() -> tuple[tuple[float, float], ...]:
    """(a, b) pairs of the four standard scenarios, from the packaged table."""
    return tuple((anc.a, anc.b) for anc in default_coeff_table().anchors)


# --- integral machinery ---


@lru_cache(maxsize=64)
def _los_cumulative(a: float, b: float, h_bs: float, r_max: float):
    """Grid and cumulative values of integral_h^r l * p_los(l) dl."""
    params = A2glpmParams(a, b)
    grid = np.linspace(h_bs, r_max, _GRID_N)
    vals = grid * p_los(params, grid, h_bs)
    cum = integrate.cumulative_trapezoid(vals, grid, initial=0.0)
    return grid, cum


def _los_integral(a, b, h_bs, r_max, r):
    grid, cum = _los_cumulative(a, b, h_bs, r_max)
    return np.interp(r, grid, cum)


def _quad(fn, lo, hi, epsrel=1e-6):
    if hi <= lo:
        return 0.0
    val, abserr = integrate.quad(fn, lo, hi, epsrel=epsrel, epsabs=1e-12, limit=200)
    if abserr > max(1e-8, 1e-3 * abs(val)):
        raise QuadratureFailure(f"integral error {abserr:g} too large for value {val:g}")
    return val


def f_los_pdf(a, b, lam_per_m2, r, ch: ChannelParams, bs_height_m=DEFAULT_BS_HEIGHT_M):
    """Density of the distance to the nearest LoS tower (the serving one).

    2*pi*lam * r * p_los(r) * exp(-2*pi*lam * integral_h^r l*p_los(l) dl),
    supported on [tower height, r_max]. Integrates to at most 1; the deficit
    is the probability that no LoS tower exists within r_max.
    """
    r_arr = np.asarray(r, dtype=float)
    h = bs_height_m
    if np.any((r_arr < h - 1e-9) | (r_arr > ch.r_max_m + 1e-9)):
        raise OutOfRange("r outside [tower height, r_max]")
    if lam_per_m2 < 0:
        raise ValueError("density must be nonnegative")
    if lam_per_m2 == 0.0:
        return 0.0 if np.isscalar(r) else np.zeros_like(r_arr)
    params = A2glpmParams(a, b)
    integral = _los_integral(a, b, h, ch.r_max_m, r_arr)
    out = (
        2.0
        * math.pi
        * lam_per_m2
        * r_arr
        * p_los(params, r_arr, h)
        * np.exp(-2.0 * math.pi * lam_per_m2 * integral)
    )
    return float(out) if np.isscalar(r) else out


def laplace_interference(
    a,
    b,
    lam_per_m2,
    s,
    r,
    ch: ChannelParams,
    include_nlos: bool = False,
    bs_height_m=DEFAULT_BS_HEIGHT_M,
):
    """Laplace transform of interference plus noise at argument s.

    LoS interferers live beyond the serving distance r (nearer ones would
    have been associated); their LoS thinning is evaluated at their own
    distance. With include_nlos, blocked towers also contribute, starting at
    the distance where a blocked tower's average power drops below the
    serving one's.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if r < bs_height_m - 1e-9:
        raise OutOfRange("r below tower height")
    params = A2glpmParams(a, b)
    m_l = ch.nakagami_m_los
    rho = ch.tx_power_w
    eta_l = ch.extra_loss_los
    alpha_l = ch.pathloss_exp_los
    noise = noise_power(ch)

    def los_integrand(l):
        frac = (m_l / (m_l + s * eta_l * rho * l ** (-alpha_l))) ** m_l
        return (1.0 - frac) * l * p_los(params, l, bs_height_m)

    exponent = -s * noise
    if lam_per_m2 > 0:
        exponent -= 2.0 * math.pi * lam_per_m2 * _quad(los_integrand, r, ch.r_max_m)
        if include_nlos:
            m_n = ch.nakagami_m_nlos
            eta_n = ch.extra_loss_nlos
            alpha_n = ch.pathloss_exp_nlos
            lo = max(
                bs_height_m,
                (eta_n / eta_l) ** (1.0 / alpha_n) * r ** (alpha_l / alpha_n),
            )

            def nlos_integrand(l):
                frac = (m_n / (m_n + s * eta_n * rho * l ** (-alpha_n))) ** m_n
                return (1.0 - frac) * l * (1.0 - p_los(params, l, bs_height_m))

            exponent -= 2.0 * math.pi * lam_per_m2 * _quad(nlos_integrand, lo, ch.r_max_m)
    return math.exp(exponent)


def coverage_integral(
    a,
    b,
    lam_per_m2,
    ch: ChannelParams,
    include_nlos: bool = False,
    bs_height_m=DEFAULT_BS_HEIGHT_M,
) -> float:
    """Exact symmetric-scenario coverage by nested adaptive quadrature.

    Alternating binomial sum over the integer LoS fading shape; each term
    integrates f_los * laplace over the serving distance.
    """
    if lam_per_m2 < 0:
        raise ValueError("density must be nonnegative")
    if lam_per_m2 == 0.0:
        return 0.0
    m = int(ch.nakagami_m_los)
    gamma_thr = ch.sinr_threshold_linear
    base = (
        (math.factorial(m) ** (-1.0 / m))
        * m
        * gamma_thr
        / (ch.tx_power_w * ch.extra_loss_los)
    )
    total = 0.0
    for k in range(1, m + 1):
        def integrand(r, _k=k):
            s = _k * base * r**ch.pathloss_exp_los
            return f_los_pdf(a, b, lam_per_m2, r, ch, bs_height_m) * laplace_interference(
                a, b, lam_per_m2, s, r, ch, include_nlos, bs_height_m
            )

        term = _quad(integrand, bs_height_m, ch.r_max_m, epsrel=1e-5)
        total += math.comb(m, k) * (-1.0) ** (k + 1) * term
    return min(max(total, 0.0), 1.0)


def symmetric_scenario_coverage(
    a,
    b,
    lam_per_m2,
    ch: ChannelParams,
    n_iter: int,
    seed: int,
    bs_height_m=DEFAULT_BS_HEIGHT_M,
) -> float:
    """Monte-Carlo coverage in the symmetric scenario.

    Each realization draws a fresh homogeneous tower process in the disk of
    horizontal radius sqrt(r_max^2 - h^2), marks towers LoS independently by
    the elevation-angle model, associates with the strongest-average-power
    (equivalently nearest) LoS tower, and tests one fading draw. Blocked
    towers stay as interferers. No LoS tower means no coverage.
    """
    if lam_per_m2 <= 0.0:
        return 0.0
    params = A2glpmParams(a, b)
    h = bs_height_m
    if ch.r_max_m <= h:
        raise OutOfRange("r_max must exceed the tower height")
    disk_r = math.sqrt(ch.r_max_m**2 - h * h)
    mu = lam_per_m2 * math.pi * disk_r * disk_r
    noise = noise_power(ch)
    rho = ch.tx_power_w
    m_l, m_n = float(ch.nakagami_m_los), float(ch.nakagami_m_nlos)
    rng = derive_rng(seed)

    chunk = max(1, min(n_iter, int(2_000_000 / max(mu, 1.0))))
    covered = 0
    done = 0
    while done < n_iter:
        n = min(chunk, n_iter - done)
        counts = rng.poisson(mu, n)
        total = int(counts.sum())
        if total == 0:
            done += n
            continue
        radii = disk_r * np.sqrt(rng.random(total))
        d = np.sqrt(radii * radii + h * h)
        los = rng.random(total) < p_los(params, d, h)
        gains = np.where(los, rng.gamma(m_l, 1.0 / m_l, total), rng.gamma(m_n, 1.0 / m_n, total))
        power = np.where(
            los,
            rho * ch.extra_loss_los * d ** (-ch.pathloss_exp_los),
            rho * ch.extra_loss_nlos * d ** (-ch.pathloss_exp_nlos),
        ) * gains

        iter_idx = np.repeat(np.arange(n), counts)
        d_los = np.where(los, d, np.inf)
        order = np.lexsort((d_los, iter_idx))
        offsets = np.concatenate(([0], np.cumsum(counts)))
        nonempty = np.flatnonzero(counts > 0)
        first = order[offsets[nonempty]]
        has_los = np.isfinite(d_los[first])
        serving = first[has_los]
        iters = nonempty[has_los]

        tot_power = np.bincount(iter_idx, weights=power, minlength=n)
        interference = tot_power[iters] - power[serving]
        sinr = power[serving] / (interference + noise)
        covered += int(np.sum(sinr > ch.sinr_threshold_linear))
        done += n
    return covered / n_iter


def closed_form_coverage(coeffs: SgCoefficients, lam_per_km2: float) -> float:
    """Two-term closed form c1*lam*c2^lam + c3*lam*c4^lam, clamped to [0,1]."""
    if lam_per_km2 < 0:
        raise ValueError("density must be nonnegative")
    lam = float(lam_per_km2)
    val = coeffs.c1 * lam * coeffs.c2**lam + coeffs.c3 * lam * coeffs.c4**lam
    return min(max(val, 0.0), 1.0)


def _closed_form_raw(x, lam):
    c1, c2, c3, c4 = x
    return c1 * lam * c2**lam + c3 * lam * c4**lam


def fit_b_of_a(anchors) -> BFitCurve:
    """Least-squares modified sigmoid through the scenario (a, b) anchors."""
    pts = [(float(a), float(b)) for a, b in anchors]
    if len(pts) < 4:
        raise ValueError("need at least 4 anchors")
    avals = np.array([p[0] for p in pts])
    bvals = np.array([p[1] for p in pts])

    def resid(x):
        p1, p2, p3, p4 = x
        return p1 + p2 / (1.0 + np.exp(np.clip(p3 * (avals - p4), -500, 500))) - bvals

    res = optimize.least_squares(resid, x0=[0.08, 0.4, 0.5, 7.0], method="lm")
    if not res.success:
        raise FitDiverged(f"b(a) fit failed: {res.message}")
    curve = BFitCurve(*res.x)
    scan = curve(np.linspace(avals.min(), avals.max(), 200))
    if not np.all(np.diff(scan) <= 1e-12):
        raise FitDiverged("fitted b(a) is not monotone decreasing over the anchors")
    return curve


def choose_r_max(
    a,
    b,
    lam_per_m2,
    ch: ChannelParams,
    eps1: float = 0.05,
    eps2: float = 0.1,
    eps3: float = 0.01,
    bs_height_m=DEFAULT_BS_HEIGHT_M,
    cap_m: float = 20_000.0,
) -> float:
    """Smallest truncation radius beyond which towers are negligible.

    Three criteria, all monotone in the radius: the LoS probability has
    dropped below eps1, the average blocked-tower power is below eps2 times
    the noise power, and the probability of finding no LoS tower inside the
    radius is below eps3. The search walks a geometric grid (factor 1.1) up
    to the cap.
    """
    for eps in (eps1, eps2, eps3):
        if not (0.0 < eps < 1.0):
            raise ValueError("epsilons must be in (0, 1)")
    params = A2glpmParams(a, b)
    noise = noise_power(ch)
    h = bs_height_m
    grid, cum = _los_cumulative(a, b, h, cap_m)
    r = h * 1.1
    while r <= cap_m:
        ok1 = p_los(params, r, h) < eps1
        ok2 = ch.tx_power_w * ch.extra_loss_nlos * r ** (-ch.pathloss_exp_nlos) < eps2 * noise
        void = math.exp(-2.0 * math.pi * lam_per_m2 * float(np.interp(r, grid, cum)))
        ok3 = void < eps3
        if ok1 and ok2 and ok3:
            return r
        r *= 1.1
    raise Unsatisfiable(
        f"no radius below {cap_m} m satisfies the truncation criteria"
    )


def initial_coefficients(
    a,
    b,
    lambda_bar_per_km2,
    ch: ChannelParams,
    bs_height_m=DEFAULT_BS_HEIGHT_M,
) -> SgCoefficients:
    """Mean-value-style initial guess for the closed-form coefficients.

    The interior evaluation points are set to the maximizers of the ring
    interference weight 2*pi*l*p_los(l) and of the serving-distance density;
    the coefficient logs are then scaled to the per-km2 convention of the
    closed form.
    """
    if lambda_bar_per_km2 <= 0:
        raise ValueError("mean density must be positive")
    params = A2glpmParams(a, b)
    h = bs_height_m
    r_max = ch.r_max_m
    lam_m2 = lambda_bar_per_km2 * PER_KM2_TO_PER_M2
    grid = np.linspace(h, r_max, _GRID_N)

    ring_weight = grid * p_los(params, grid, h)
    if ring_weight.max() - ring_weight.min() < 1e-15:
        raise ArgmaxNotFound("ring interference weight is flat")
    l_tilde = float(grid[np.argmax(ring_weight)])

    dens = f_los_pdf(a, b, lam_m2, grid, ch, h)
    if dens.max() - dens.min() < 1e-300:
        raise ArgmaxNotFound("serving-distance density is flat")
    r_tilde = float(grid[np.argmax(dens)])

    m = int(ch.nakagami_m_los)
    rho, eta_l, alpha_l = ch.tx_power_w, ch.extra_loss_los, ch.pathloss_exp_los
    noise = noise_power(ch)
    gamma_thr = ch.sinr_threshold_linear
    s1 = math.sqrt(2.0) * gamma_thr / (rho * eta_l) * r_tilde**alpha_l
    s2 = 2.0 * s1

    p_r = float(p_los(params, r_tilde, h))
    p_l = float(p_los(params, l_tilde, h))

    def bracket(s):
        return 1.0 - (m / (m + s * eta_l * rho * l_tilde ** (-alpha_l))) ** m

    c1_si = 4.0 * math.pi * (r_max - h) * p_r * math.exp(-s1 * noise)
    c3_si = -2.0 * math.pi * (r_max - h) * p_r * math.exp(-s2 * noise)
    log_c2_si = -2.0 * math.pi * (
        (r_tilde - h) * l_tilde * p_l + (r_max - r_tilde) * bracket(s1) * l_tilde * p_l
    )
    log_c4_si = -2.0 * math.pi * (
        (r_tilde - h) * l_tilde * p_l + (r_max - r_tilde) * bracket(s2) * l_tilde * p_l
    )
    return SgCoefficients(
        a=a,
        b=b,
        c1=c1_si * PER_KM2_TO_PER_M2,
        c2=math.exp(log_c2_si * PER_KM2_TO_PER_M2),
        c3=c3_si * PER_KM2_TO_PER_M2,
        c4=math.exp(log_c4_si * PER_KM2_TO_PER_M2),
    )


_FIT_BOUNDS = ([1e-12, 1e-6, -10.0, 1e-6], [10.0, 1.0 - 1e-9, -1e-12, 1.0 - 1e-9])


def train_coefficients(cfg: SgTrainConfig, ch: ChannelParams) -> CoefficientDb:
    """Fit closed-form coefficients against symmetric-scenario simulation.

    For every (a, b) pair (given explicitly or sampled on the fitted b(a)
    curve) the truncation radius is chosen per density by the three-criteria
    policy, simulation targets are generated on the density grid, and a
    bounded trust-region least squares refines the mean-value initial guess.
    """
    curve = fit_b_of_a(default_ab_anchors())
    if cfg.ab_pairs is not None:
        pairs = [(float(a), float(b)) for a, b in cfg.ab_pairs]
    else:
        avals = np.geomspace(cfg.a_range[0], cfg.a_range[1], cfg.n_ab)
        pairs = [(float(av), float(curve(av))) for av in avals]

    grid = list(cfg.lambda_grid_per_km2)
    entries = []
    for idx, (a, b) in enumerate(pairs):
        r_maxes = []
        for lam_km2 in grid:
            if cfg.r_max_fixed_m is not None:
                r_maxes.append(cfg.r_max_fixed_m)
            else:
                r_maxes.append(
                    choose_r_max(
                        a,
                        b,
                        lam_km2 * PER_KM2_TO_PER_M2,
                        ch,
                        cfg.eps1,
                        cfg.eps2,
                        cfg.eps3,
                        cfg.bs_height_m,
                    )
                )
        targets = np.array(
            [
                symmetric_scenario_coverage(
                    a,
                    b,
                    lam_km2 * PER_KM2_TO_PER_M2,
                    ch.with_r_max(rm),
                    cfg.n_iter,
                    derive_seed(cfg.seed, idx, j),
                    cfg.bs_height_m,
                )
                for j, (lam_km2, rm) in enumerate(zip(grid, r_maxes))
            ]
        )
        lam_bar = float(np.mean(grid))
        rm_mid = r_maxes[len(r_maxes) // 2]
        init = initial_coefficients(a, b, lam_bar, ch.with_r_max(rm_mid), cfg.bs_height_m)
        x0 = np.clip(
            [init.c1, init.c2, init.c3, init.c4],
            np.array(_FIT_BOUNDS[0]) + 1e-12,
            np.array(_FIT_BOUNDS[1]) - 1e-12,
        )
        lam_arr = np.array(grid)

        def resid(x):
            return _closed_form_raw(x, lam_arr) - targets

        res = optimize.least_squares(resid, x0=x0, bounds=_FIT_BOUNDS, method="trf")
        if not res.success:
            raise FitDiverged(f"coefficient fit failed for pair ({a}, {b}): {res.message}")
        c1, c2, c3, c4 = (float(v) for v in res.x)
        entries.append(
            SgCoefficients(
                a=a,
                b=b,
                c1=c1,
                c2=c2,
                c3=c3,
                c4=c4,
                residual=float(np.mean(np.abs(res.fun))),
            )
        )
    return CoefficientDb(tuple(entries), curve, tuple(grid))


def sg_coverage(
    city,
    mrp_xy,
    db: CoefficientDb,
    neighborhood_radius_m: float = 50.0,
    table=None,
    omega: float | None = None,
) -> float:
    """Constant-time per-point coverage from the trained database.

    Points inside buildings score zero; otherwise the local terrain selects
    the nearest trained pair and the local tower count sets the density fed
    to the closed form.
    """
    if db is None or not db.entries:
        raise EmptyDatabase("no trained coefficients")
    if type1_blockage(city, mrp_xy):
        return 0.0
    if table is None:
        table = default_coeff_table()
    if omega is None:
        omega = city.estimated_rayleigh_scale()
    stats = neighborhood_stats(city, mrp_xy, neighborhood_radius_m, omega)
    ab = ab_from_stats(stats, table)
    _, entry = db.nearest(ab.a, ab.b)
    p = np.asarray(mrp_xy, dtype=float)
    if len(city.bs_xy) == 0:
        return 0.0
    d2 = np.sum((city.bs_xy - p) ** 2, axis=1)
    count = int(np.sum(d2 < neighborhood_radius_m**2))
    area_km2 = math.pi * neighborhood_radius_m**2 * 1e-6
    lam_km2 = count / area_km2
    return closed_form_coverage(entry, lam_km2)
