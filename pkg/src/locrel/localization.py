"""Cramer-Rao bound for TOA localization with an unknown clock bias.

For each BS the six unknowns

    eta = [tau_los, tau_scatter, Re a_los, Im a_los, Re a_scatter, Im a_scatter]

enter the mean of the received ping. The LoS delay carries the location; the
other five are nuisance parameters and are removed by a Schur complement
(the equivalent Fisher information). The two per-BS delay informations are
then mapped to (x, B) and the x-entry of the inverse gives sigma^2(x; phi).

sigma^2 depends on the scatter coefficients only through their phases phi,
so :class:`LocalizationModel` tabulates it on a phase grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import channel
from .config import SPEED_OF_LIGHT, SystemConfig
from .errors import DegenerateGeometry, IllConditioned, SingularModel

TWO_PI = 2.0 * np.pi
COND_LIMIT = 1e12
DET_RTOL = 1e-10


class PhasePair(NamedTuple):
    """Scatter-path phases for BS 1 and BS 2, wrapped to [0, 2 pi)."""

    phi1: float
    phi2: float

    @classmethod
    def wrap(cls, phi1: float, phi2: float) -> "PhasePair":
        return cls(float(np.mod(phi1, TWO_PI)), float(np.mod(phi2, TWO_PI)))


@dataclass(frozen=True)
class LocUncertainty:
    variance: float
    fisher_xb: np.ndarray  # 2x2 information on (x, B)


def phase_nodes(n: int) -> np.ndarray:
    """Trapezoid nodes on the periodic interval [0, 2 pi)."""
    return TWO_PI * np.arange(n) / n


def _mean_derivatives(coeffs: channel.PathCoefficients, cfg: SystemConfig) -> np.ndarray:
    # rows: d mu_j / d eta_k for the six parameters, columns: subcarriers
    d1 = channel.steering(coeffs.tau_los, cfg)
    d2 = channel.steering(coeffs.tau_scatter, cfg)
    w = -2j * np.pi * cfg.subcarrier_spacing * np.arange(cfg.n_subcarriers)
    return np.stack([w * coeffs.a_los * d1, w * coeffs.a_scatter * d2, d1, 1j * d1, d2, 1j * d2])


def fisher_eta(x: float, bs: int, coeffs: channel.PathCoefficients, cfg: SystemConfig) -> np.ndarray:
    """6x6 Fisher information of one BS's ping for fixed path coefficients."""
    channel._check_distance(channel.distance(x, bs, cfg), cfg)
    if coeffs.tau_scatter == coeffs.tau_los:
        raise SingularModel("LoS and scatter delays coincide; paths are not separable")
    g = _mean_derivatives(coeffs, cfg)
    return (2.0 * cfg.tx_power / cfg.noise_power) * np.real(g @ g.conj().T)


def _equilibrate(J: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diag = np.diagonal(J, axis1=-2, axis2=-1)
    if np.any(~(diag > 0)):
        raise IllConditioned("Fisher information has a non-positive diagonal entry")
    s = 1.0 / np.sqrt(diag)
    return J * s[..., :, None] * s[..., None, :], s


def equivalent_fisher(J: np.ndarray) -> float:
    """Information on the first parameter after removing the other five.

    The Schur complement is evaluated on the diagonally equilibrated matrix;
    the conditioning check applies to that scaled nuisance block.
    """
    Js, s = _equilibrate(np.asarray(J, dtype=float))
    nuis = Js[1:, 1:]
    cond = np.linalg.cond(nuis)
    if not cond < COND_LIMIT:
        raise IllConditioned(f"nuisance block condition number {cond:.3g}")
    cross = Js[1:, 0]
    je = (Js[0, 0] - cross @ np.linalg.solve(nuis, cross)) / s[0] ** 2
    return float(max(je, 0.0))


def _equivalent_fisher_batch(J: np.ndarray) -> np.ndarray:
    Js, s = _equilibrate(J)
    cross = Js[..., 1:, 0]
    sol = np.linalg.solve(Js[..., 1:, 1:], cross[..., None])[..., 0]
    je = (Js[..., 0, 0] - np.einsum("...i,...i->...", cross, sol)) / s[..., 0] ** 2
    if np.any(~(je > 0)):
        raise IllConditioned("equivalent Fisher information is not positive")
    return je


def _scatter_for_phase(x: float, bs: int, phase: float, cfg: SystemConfig, magnitude=None) -> complex:
    # magnitude convention: sqrt(scatter variance); sigma^2 does not depend on it
    if magnitude is None:
        magnitude = np.sqrt(channel.scatter_variance(float(channel.distance(x, bs, cfg)), cfg))
    return magnitude * np.exp(1j * phase)


def _delay_sensitivity(x: float, cfg: SystemConfig) -> np.ndarray:
    # T matrix: rows BS, columns (x, B)
    return np.array([[np.sign(x - b) / SPEED_OF_LIGHT, 1.0] for b in cfg.bs_positions])


def _position_variance(je1, je2, t: np.ndarray):
    a = t[0, 0] ** 2 * je1 + t[1, 0] ** 2 * je2
    b = t[0, 0] * je1 + t[1, 0] * je2
    d = je1 + je2
    det = a * d - b * b
    if np.any(~(det > DET_RTOL * a * d)):
        raise IllConditioned(
            "position and clock bias are not jointly identifiable here "
            "(UE outside the segment between the base stations?)"
        )
    return d / det


def _check_geometry(x: float, cfg: SystemConfig) -> None:
    for bs in (0, 1):
        d = float(channel.distance(x, bs, cfg))
        if d < cfg.numerics.min_bs_distance:
            raise DegenerateGeometry(f"x = {x} m is within min_bs_distance of BS {bs + 1}")


def crlb(x: float, phases: PhasePair, cfg: SystemConfig, magnitudes=None) -> LocUncertainty:
    """Position CRLB sigma^2(x; phi) for given scatter phases.

    ``magnitudes`` optionally fixes |a_scatter| per BS; the result does not
    depend on it.
    """
    _check_geometry(x, cfg)
    mags = (None, None) if magnitudes is None else magnitudes
    je = []
    for bs, phi in enumerate(phases):
        coeffs = channel.path_coefficients(x, bs, _scatter_for_phase(x, bs, phi, cfg, mags[bs]), cfg)
        je.append(equivalent_fisher(fisher_eta(x, bs, coeffs, cfg)))
    t = _delay_sensitivity(x, cfg)
    fisher_xb = t.T @ np.diag(je) @ t
    var = _position_variance(je[0], je[1], t)
    return LocUncertainty(variance=float(var), fisher_xb=fisher_xb)


def _phase_basis(x: float, bs: int, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """J(phi) = J0 + cos(phi) Jc + sin(phi) Js.

    Every entry of the Fisher matrix is affine in (cos phi, sin phi) because
    the scatter coefficient enters the mean derivatives linearly, so three
    evaluations determine it exactly.
    """
    def at(phi):
        coeffs = channel.path_coefficients(x, bs, _scatter_for_phase(x, bs, phi, cfg), cfg)
        return fisher_eta(x, bs, coeffs, cfg)

    j_0, j_half, j_pi = at(0.0), at(np.pi / 2), at(np.pi)
    j0 = 0.5 * (j_0 + j_pi)
    return j0, 0.5 * (j_0 - j_pi), j_half - j0


def equivalent_fisher_phases(x: float, bs: int, phases, cfg: SystemConfig) -> np.ndarray:
    """J^E of BS ``bs`` for an array of scatter phases."""
    j0, jc, js = _phase_basis(x, bs, cfg)
    phases = np.asarray(phases, dtype=float)
    J = j0 + np.cos(phases)[..., None, None] * jc + np.sin(phases)[..., None, None] * js
    return _equivalent_fisher_batch(J)


def position_variance(x: float, phi1, phi2, cfg: SystemConfig) -> np.ndarray:
    """Vectorised sigma^2(x; phi); phi1 and phi2 broadcast against each other."""
    _check_geometry(x, cfg)
    je1 = equivalent_fisher_phases(x, 0, phi1, cfg)
    je2 = equivalent_fisher_phases(x, 1, phi2, cfg)
    return _position_variance(je1, je2, _delay_sensitivity(x, cfg))


def sample_estimate(x: float, cfg: SystemConfig, rng: np.random.Generator, size=None):
    """Draw location estimates from the hierarchical Gaussian model."""
    n = 1 if size is None else int(size)
    phi1 = rng.uniform(0.0, TWO_PI, n)
    phi2 = rng.uniform(0.0, TWO_PI, n)
    var = position_variance(x, phi1, phi2, cfg)
    xhat = x + np.sqrt(var) * rng.standard_normal(n)
    return float(xhat[0]) if size is None else xhat


def average_std(x: float, cfg: SystemConfig, n_nodes: int | None = None) -> float:
    """Phase-averaged localization standard deviation sigma_bar(x)."""
    n = n_nodes or cfg.numerics.phase_nodes
    nodes = phase_nodes(n)
    var = position_variance(x, nodes[:, None], nodes[None, :], cfg)
    return float(np.sqrt(var.mean()))


class LocalizationModel:
    """Cached phase-grid evaluations of sigma(x; phi) for one configuration."""

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self._grids: dict[tuple[float, int], np.ndarray] = {}
        self._bar: tuple[np.ndarray, np.ndarray] | None = None

    def sigma_grid(self, x: float, n_nodes: int | None = None) -> np.ndarray:
        """sigma(x; phi) on the n x n trapezoid grid (rows phi1, columns phi2)."""
        n = n_nodes or self.cfg.numerics.phase_nodes
        key = (float(x), n)
        grid = self._grids.get(key)
        if grid is None:
            nodes = phase_nodes(n)
            grid = np.sqrt(position_variance(float(x), nodes[:, None], nodes[None, :], self.cfg))
            self._grids[key] = grid
        return grid

    def average_std(self, x: float) -> float:
        return float(np.sqrt(np.mean(self.sigma_grid(x) ** 2)))

    def identifiable_range(self) -> tuple[float, float]:
        lo, hi = sorted(self.cfg.bs_positions)
        dmin = self.cfg.numerics.min_bs_distance
        return lo + dmin, hi - dmin

    def sigma_bar(self, xhat):
        """sigma_bar at (estimated) locations, vectorised.

        Locations outside the segment between the BSs, where the CRLB does
        not exist, are clamped to its ends. Values come from a table on the
        radio-map step, interpolated linearly.
        """
        if self._bar is None:
            lo, hi = self.identifiable_range()
            step = self.cfg.numerics.map_step
            xs = np.arange(lo, hi, step)
            xs = np.append(xs, hi) if xs[-1] < hi else xs
            vals = np.array([average_std(float(x), self.cfg) for x in xs])
            self._bar = (xs, vals)
        xs, vals = self._bar
        return np.interp(np.clip(xhat, xs[0], xs[-1]), xs, vals)
