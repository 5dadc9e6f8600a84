"""Two-path OFDM channel between the UE and each base station.

Path 1 is the deterministic line-of-sight (LoS) path with free-space gain;
path 2 lumps the unresolvable scattered paths into a single circularly
symmetric Gaussian coefficient whose variance follows an exponential power
delay profile.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig
from .errors import DegenerateGeometry


@dataclass(frozen=True)
class PathCoefficients:
    a_los: complex
    a_scatter: complex
    tau_los: float
    tau_scatter: float


@dataclass(frozen=True)
class RicianParams:
    avg_power: float
    k_factor: float


def distance(x, bs: int, cfg: SystemConfig):
    """Distance (m) from UE position ``x`` to base station ``bs`` (0 or 1)."""
    return np.abs(np.asarray(x, dtype=float) - cfg.bs_positions[bs])


def _check_distance(d, cfg: SystemConfig) -> None:
    if np.any(np.asarray(d) < cfg.numerics.min_bs_distance):
        raise DegenerateGeometry(
            f"distance {np.min(d):.3g} m is below min_bs_distance "
            f"{cfg.numerics.min_bs_distance} m"
        )


def path_gain(d, cfg: SystemConfig):
    """Free-space gain lambda^2 / (16 pi^2 d^2)."""
    _check_distance(d, cfg)
    d = np.asarray(d, dtype=float)
    out = cfg.wavelength**2 / (16.0 * np.pi**2 * d**2)
    return float(out) if out.ndim == 0 else out


def los_coefficient(x: float, bs: int, cfg: SystemConfig) -> complex:
    d = float(distance(x, bs, cfg))
    return np.sqrt(path_gain(d, cfg)) * np.exp(-2j * np.pi * d / cfg.wavelength)


def scatter_ratio(cfg: SystemConfig) -> float:
    """Scatter variance relative to the LoS power; independent of distance."""
    rho = cfg.pdp_rho
    return np.exp(-cfg.excess_delay_s / rho) / rho


def scatter_variance(d, cfg: SystemConfig):
    # The exponent uses the excess delay in seconds and rho as given, so
    # exp(-dtau/rho) ~ 1 for the default settings.
    return path_gain(d, cfg) * scatter_ratio(cfg)


def scatter_coefficient(
    d: float,
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
    *,
    phase: float | None = None,
    quantile: float = 0.5,
    size=None,
):
    """Scatter-path coefficient ``a ~ CN(0, sigma^2(d))``.

    With ``rng`` the coefficient is sampled. Otherwise a deterministic value
    is built from ``phase`` and the ``quantile`` of the Rayleigh-distributed
    magnitude, which is what phase-conditioned CRLB evaluations need.
    """
    var = scatter_variance(d, cfg)
    if rng is not None:
        z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        return np.sqrt(var / 2.0) * z
    if phase is None:
        raise ValueError("either rng or phase must be given")
    if not 0.0 <= quantile < 1.0:
        raise ValueError("quantile must lie in [0, 1)")
    # |a|^2 is exponential with mean var
    mag = np.sqrt(-var * np.log1p(-quantile))
    return mag * np.exp(1j * phase)


def path_coefficients(x: float, bs: int, a_scatter: complex, cfg: SystemConfig) -> PathCoefficients:
    d = float(distance(x, bs, cfg))
    tau = d / SPEED_OF_LIGHT
    return PathCoefficients(
        a_los=los_coefficient(x, bs, cfg),
        a_scatter=complex(a_scatter),
        tau_los=tau,
        tau_scatter=tau + cfg.excess_delay_s,
    )


def steering(tau, cfg: SystemConfig) -> np.ndarray:
    """Per-subcarrier phase factors d_j(tau) = exp(-j 2 pi j df tau)."""
    j = np.arange(cfg.n_subcarriers)
    return np.exp(-2j * np.pi * cfg.subcarrier_spacing * np.multiply.outer(tau, j))


def freq_response(x: float, bs: int, a_scatter, cfg: SystemConfig) -> np.ndarray:
    """Channel frequency response on all subcarriers.

    ``a_scatter`` may be an array; the result then has a trailing subcarrier
    axis.
    """
    c = path_coefficients(x, bs, 0.0, cfg)
    a2 = np.asarray(a_scatter)
    return c.a_los * steering(c.tau_los, cfg) + a2[..., None] * steering(c.tau_scatter, cfg)


def rician_params(x: float, bs: int, cfg: SystemConfig) -> RicianParams:
    d = float(distance(x, bs, cfg))
    pl = path_gain(d, cfg)
    rho, dtau = cfg.pdp_rho, cfg.excess_delay_s
    return RicianParams(
        avg_power=pl * (1.0 + np.exp(-dtau / rho) / rho),
        k_factor=rho * np.exp(dtau / rho),
    )


def simulate_ping(
    x: float,
    bs: int,
    cfg: SystemConfig,
    rng: np.random.Generator,
    a_scatter: complex | None = None,
) -> np.ndarray:
    """One received ping (all pilots s_j = 1) with a fresh scatter draw."""
    d = float(distance(x, bs, cfg))
    if a_scatter is None:
        a_scatter = scatter_coefficient(d, cfg, rng)
    h = freq_response(x, bs, a_scatter, cfg)
    n = cfg.n_subcarriers
    noise = np.sqrt(cfg.noise_power / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return np.sqrt(cfg.tx_power) * h + noise


def ping_energy(x: float, bs: int, n_pings: int, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Samples of ||y||^2 for ``n_pings`` independent pings.

    Given the scatter draw, ||y||^2 is a scaled noncentral chi-square with
    2N degrees of freedom, so each ping costs O(1) instead of O(N).
    """
    d = float(distance(x, bs, cfg))
    pl = path_gain(d, cfg)
    z = np.sqrt(scatter_ratio(cfg) / 2.0) * (
        rng.standard_normal(n_pings) + 1j * rng.standard_normal(n_pings)
    )
    n = cfg.n_subcarriers
    w_sum = steering(cfg.excess_delay_s, cfg).sum()
    # sum_j |1 + z w_j|^2
    gain = n * (1.0 + np.abs(z) ** 2) + 2.0 * np.real(z * w_sum)
    signal = cfg.tx_power * pl * gain
    half = cfg.noise_power / 2.0
    return half * rng.noncentral_chisquare(2 * n, signal / half)
