"""Downlink channel model and the shared Monte-Carlo SINR loop.

Received power is tx_power * extra_loss * distance^-alpha with separate
LoS/NLoS loss and exponent; small-scale fading is Nakagami-m, drawn as a
unit-mean Gamma power gain. All internal math is linear watts and meters;
dB conversion happens exactly once when parameters are constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonpositiveDistance


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    tx_power_w: float
    bandwidth_hz: float
    noise_psd_dbm_hz: float
    sinr_threshold_linear: float
    extra_loss_los: float
    extra_loss_nlos: float
    pathloss_exp_los: float
    pathloss_exp_nlos: float
    nakagami_m_los: int
    nakagami_m_nlos: int
    r_max_m: float = 5000.0
    n_iter: int = 2000

    def __post_init__(self):
        if self.tx_power_w <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("powers and bandwidth must be positive")
        if self.extra_loss_los <= 0 or self.extra_loss_nlos <= 0:
            raise ValueError("extra losses must be positive linear factors")
        if self.pathloss_exp_los < 2 or self.pathloss_exp_nlos < 2:
            raise ValueError("path-loss exponents must be >= 2")
        if int(self.nakagami_m_los) != self.nakagami_m_los or self.nakagami_m_los < 1:
            raise ValueError("LoS Nakagami m must be an integer >= 1")
        if self.nakagami_m_nlos < 1:
            raise ValueError("NLoS Nakagami m must be >= 1")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")

    @classmethod
    def from_db(
        cls,
        tx_power_dbm: float = 30.0,
        bandwidth_hz: float = 10e6,
        noise_psd_dbm_hz: float = -174.0,
        sinr_threshold_db: float = 0.0,
        extra_loss_los_db: float = -38.6,
        extra_loss_nlos_db: float = -59.5,
        pathloss_exp_los: float = 2.0,
        pathloss_exp_nlos: float = 3.0,
        nakagami_m_los: int = 2,
        nakagami_m_nlos: int = 1,
        r_max_m: float = 5000.0,
        n_iter: int = 2000,
    ) -> "ChannelParams":
        """Construct from dB quantities; defaults are the standard set."""
        return cls(
            tx_power_w=dbm_to_watt(tx_power_dbm),
            bandwidth_hz=bandwidth_hz,
            noise_psd_dbm_hz=noise_psd_dbm_hz,
            sinr_threshold_linear=db_to_linear(sinr_threshold_db),
            extra_loss_los=db_to_linear(extra_loss_los_db),
            extra_loss_nlos=db_to_linear(extra_loss_nlos_db),
            pathloss_exp_los=pathloss_exp_los,
            pathloss_exp_nlos=pathloss_exp_nlos,
            nakagami_m_los=nakagami_m_los,
            nakagami_m_nlos=nakagami_m_nlos,
            r_max_m=r_max_m,
            n_iter=n_iter,
        )

    def to_db_config(self) -> dict:
        """JSON-friendly dict in dB units (inverse of from_db)."""
        return {
            "tx_power_dbm": 10.0 * math.log10(self.tx_power_w) + 30.0,
            "bandwidth_hz": self.bandwidth_hz,
            "noise_psd_dbm_hz": self.noise_psd_dbm_hz,
            "sinr_threshold_db": 10.0 * math.log10(self.sinr_threshold_linear),
            "extra_loss_los_db": 10.0 * math.log10(self.extra_loss_los),
            "extra_loss_nlos_db": 10.0 * math.log10(self.extra_loss_nlos),
            "pathloss_exp_los": self.pathloss_exp_los,
            "pathloss_exp_nlos": self.pathloss_exp_nlos,
            "nakagami_m_los": self.nakagami_m_los,
            "nakagami_m_nlos": self.nakagami_m_nlos,
            "r_max_m": self.r_max_m,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_db_config(cls, cfg: dict) -> "ChannelParams":
        return cls.from_db(**cfg)

    def with_r_max(self, r_max_m: float) -> "ChannelParams":
        return replace(self, r_max_m=r_max_m)


@dataclass(frozen=True)
class LinkState:
    """One BS-MRP link: 3D distance, blockage verdict, average power."""

    distance_m: float
    blocked: bool
    avg_power_w: float

    def __post_init__(self):
        if self.distance_m < 0 or self.avg_power_w < 0:
            raise ValueError("distance and power must be nonnegative")


def avg_received_power(params: ChannelParams, d_m, los: bool):
    """Average received power tx * loss * d^-alpha; scalar or array."""
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0.0):
        raise NonpositiveDistance("distance must be positive")
    if los:
        out = params.tx_power_w * params.extra_loss_los * d ** (-params.pathloss_exp_los)
    else:
        out = params.tx_power_w * params.extra_loss_nlos * d ** (-params.pathloss_exp_nlos)
    return float(out) if np.isscalar(d_m) else out


def noise_power(params: ChannelParams) -> float:
    """Thermal noise in watts over the configured bandwidth."""
    dbm = params.noise_psd_dbm_hz + 10.0 * math.log10(params.bandwidth_hz)
    return dbm_to_watt(dbm)


def sample_nakagami_power(m: float, rng: np.random.Generator, size=None):
    """Unit-mean Nakagami-m power gain: Gamma(shape=m, scale=1/m)."""
    if m < 1:
        raise ValueError("Nakagami m must be >= 1")
    return rng.gamma(m, 1.0 / m, size)


def mc_sinr_coverage(
    avg_power_w,
    nakagami_m,
    associated_index: int,
    noise_w: float,
    threshold_linear: float,
    n_iter: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of fading realizations whose SINR beats the threshold.

    `avg_power_w` and `nakagami_m` broadcast to (n_iter, n_links); each
    realization draws one fresh Gamma gain per link. The serving link is
    excluded from the interference sum.
    """
    avg = np.asarray(avg_power_w, dtype=float)
    m = np.asarray(nakagami_m, dtype=float)
    n_links = avg.shape[-1]
    avg = np.broadcast_to(avg, (n_iter, n_links))
    m = np.broadcast_to(m, (n_iter, n_links))
    gains = rng.gamma(m, 1.0 / m)
    powers = avg * gains
    total = powers.sum(axis=1)
    serving = powers[:, associated_index]
    sinr = serving / (total - serving + noise_w)
    return float(np.mean(sinr > threshold_linear))


def coverage_from_links(
    params: ChannelParams,
    links,
    associated_index: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo coverage probability for a fixed set of links.

    Each of params.n_iter realizations redraws every link's fading with the
    Nakagami shape selected by its blockage flag.
    """
    if not links:
        raise ValueError("links must be nonempty")
    if not (0 <= associated_index < len(links)):
        raise ValueError("associated_index out of range")
    avg = np.array([lk.avg_power_w for lk in links])
    m = np.array(
        [params.nakagami_m_nlos if lk.blocked else params.nakagami_m_los for lk in links],
        dtype=float,
    )
    return mc_sinr_coverage(
        avg,
        m,
        associated_index,
        noise_power(params),
        params.sinr_threshold_linear,
        params.n_iter,
        rng,
    )
