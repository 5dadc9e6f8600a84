"""Closed-form single-subcarrier results.

With one subcarrier and BS 1 at the origin, the received power
``Y = |h|^2`` is Rician. Its lower tail is linear in ``y``:

    P(Y <= y) ~= y x^2 psi,   psi = (16 pi^2 / lambda^2) rho exp(dtau/rho - rho exp(dtau/rho))

which gives the eps-outage capacity ``log2(1 + psi' / x^2)`` with
``psi' = P_tx eps / (sigma_n^2 psi)``, and the edge of the outage region of
the backoff selector in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import InvalidDomain


@dataclass(frozen=True)
class TailConstants:
    psi: float
    psi_prime: float


def single_subcarrier(cfg: SystemConfig) -> SystemConfig:
    """The same system with one subcarrier and BS 1 at the origin."""
    span = cfg.bs_positions[1] - cfg.bs_positions[0]
    return cfg.replace(n_subcarriers=1, bs_positions=(0.0, span))


def psi(cfg: SystemConfig) -> float:
    r = cfg.excess_delay_s / cfg.pdp_rho
    rho = cfg.pdp_rho
    return 16.0 * np.pi**2 / cfg.wavelength**2 * rho * np.exp(r - rho * np.exp(r))


def tail_constants(eps: float, cfg: SystemConfig) -> TailConstants:
    if not 0.0 < eps < 1.0:
        raise InvalidDomain("eps must lie in (0, 1)")
    p = psi(cfg)
    return TailConstants(psi=p, psi_prime=cfg.tx_power * eps / (cfg.noise_power * p))


def _positive(x, name="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise InvalidDomain(f"{name} must be > 0 (UE on the positive side of BS 1)")
    return x


def tail_cdf(y, x, cfg: SystemConfig):
    """Power-tail approximation of P(|h|^2 <= y) at distance x."""
    x = _positive(x)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise InvalidDomain("y must be >= 0")
    out = y * x**2 * psi(cfg)
    return float(out) if out.ndim == 0 else out


def analytic_outage_capacity(eps: float, x, cfg: SystemConfig):
    """eps-outage capacity (bits/s/Hz) of one subcarrier under the tail model."""
    if eps > 1e-2:
        raise InvalidDomain("tail approximation requires eps <= 1e-2")
    x = _positive(x)
    out = np.log2(1.0 + tail_constants(eps, cfg).psi_prime / x**2)
    return float(out) if out.ndim == 0 else out


def _check_k(k: float) -> None:
    if not 0.0 < k <= 1.0:
        raise InvalidDomain("k must lie in (0, 1]")


def edge_exact(x, k: float, eps: float, cfg: SystemConfig):
    """Delta x such that x_hat = x - Delta x satisfies k C(x_hat) = C(x)."""
    _check_k(k)
    x = _positive(x)
    pp = tail_constants(eps, cfg).psi_prime
    with np.errstate(over="ignore"):
        # (1 + psi'/x^2)^(1/k) - 1, without cancellation for small psi'/x^2
        den = np.expm1(np.log1p(pp / x**2) / k)
    if np.any(~np.isfinite(den)) or np.any(~(den > 0)):
        raise InvalidDomain("edge is not representable for these k and psi'/x^2")
    out = x - np.sqrt(pp / den)
    return float(out) if out.ndim == 0 else out


def edge_approx(x, k: float):
    """High-distance limit of :func:`edge_exact`: Delta x = x (1 - sqrt k)."""
    _check_k(k)
    out = np.asarray(x, dtype=float) * (1.0 - np.sqrt(k))
    return float(out) if out.ndim == 0 else out
