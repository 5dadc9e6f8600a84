"""Outage region, meta-probability and throughput ratio of a rate selector.

For a true location x and serving BS i the transmission is in outage
"beyond target" when the selected rate exceeds the eps-quantile at the true
location, R(x_hat) > F^{-1}(eps; x, i). The set of estimates x_hat where this
happens is the outage region S(x, i); its probability under
x_hat | phi ~ N(x, sigma^2(x; phi)), averaged over the scatter phases, is the
meta-probability.

Selectors are duck-typed: anything with ``eps``, ``kind`` and
``rate(xhat, bs, rmap, loc)`` works. Oracle selectors additionally expose
``cell_edges()`` and ``table`` so their (piecewise-constant) region is built
from whole cells.

The localization provider ``loc`` must offer ``sigma_grid(x, n_nodes)``
(``sigma(x; phi)`` on an n x n trapezoid grid) and, for CI selectors,
``sigma_bar(xhat)``; :class:`locrel.localization.LocalizationModel` does both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonMonotoneSelector
from .quadrature import hermite_rule, qfunc
from .radiomap import RadioMap

BISECT_TOL = 1e-2  # m


@dataclass(frozen=True)
class OutageInterval:
    lo: float
    hi: float
    empty: bool
    pieces: tuple[tuple[float, float], ...] = ()
    diagnostic: str = ""

    @classmethod
    def from_pieces(cls, pieces, diagnostic: str = "") -> "OutageInterval":
        pieces = tuple((float(a), float(b)) for a, b in pieces)
        if not pieces:
            return cls(lo=math.nan, hi=math.nan, empty=True, pieces=(), diagnostic=diagnostic)
        return cls(lo=pieces[0][0], hi=pieces[-1][1], empty=False, pieces=pieces, diagnostic=diagnostic)


@dataclass
class ReliabilityReport:
    x: float
    meta_prob: float
    per_bs: tuple[tuple[float, float], tuple[float, float]]  # (meta_prob_bs, p_select)
    throughput_ratio: float | None = None
    diagnostics: dict = field(default_factory=dict)


def gauss_mass(lo, hi, mu, sigma):
    """P(lo < X < hi) for X ~ N(mu, sigma^2), accurate in both tails."""
    a = (np.asarray(lo, dtype=float) - mu) / sigma
    b = (np.asarray(hi, dtype=float) - mu) / sigma
    upper = qfunc(a) - qfunc(b)  # accurate when the interval lies right of mu
    lower = qfunc(-b) - qfunc(-a)  # accurate when it lies left of mu
    return np.where(a > 0, upper, lower)


def interval_mass(interval: OutageInterval, x: float, sigma) -> np.ndarray:
    """Gaussian mass of the outage region for each sigma in ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    total = np.zeros_like(sigma)
    for lo, hi in interval.pieces:
        total = total + gauss_mass(lo, hi, x, sigma)
    return total


def outage_prob_given_estimate(x: float, xhat, bs: int, selector, rmap: RadioMap, loc=None):
    """p_out(x, x_hat; i) = F(R_i(x_hat); x, i)."""
    rate = selector.rate(xhat, bs, rmap, loc)
    return rmap.outage_prob(rate, x, bs)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    return list(zip(idx[0::2], idx[1::2] - 1))


def _bisect(f, a: float, b: float, tol: float = BISECT_TOL) -> float:
    # f(a) > 0 >= f(b) or the reverse; returns the crossing location
    fa_pos = f(a) > 0
    while abs(b - a) > tol:
        m = 0.5 * (a + b)
        if (f(m) > 0) == fa_pos:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _oracle_interval(x: float, bs: int, selector, thr: float) -> OutageInterval:
    rates = selector.table.rates[bs]
    edges = selector.cell_edges()
    pieces = [(edges[i0], edges[i1 + 1]) for i0, i1 in _runs(rates > thr)]
    diag = f"{len(pieces)} separate pieces" if len(pieces) > 1 else ""
    return OutageInterval.from_pieces(pieces, diag)


def outage_interval(x: float, bs: int, selector, rmap: RadioMap, loc=None, *, strict: bool = False) -> OutageInterval:
    """Outage region S(x, i) as a union of intervals of x_hat.

    The selected rate is scanned on the map grid and every crossing of the
    threshold F^{-1}(eps; x, i) is refined by bisection. A region reaching the
    end of the map extends to infinity, since estimates beyond the map are
    clamped to its edge.
    """
    thr = rmap.eps_quantile(selector.eps, x, bs)
    if getattr(selector, "kind", None) == "oracle":
        return _oracle_interval(x, bs, selector, thr)
    grid = rmap.sel_x
    pos = selector.rate(grid, bs, rmap, loc) > thr
    runs = _runs(pos)
    if len(runs) > 1 and strict:
        raise NonMonotoneSelector(f"outage region at x={x} has {len(runs)} pieces")

    def h(xh):
        return float(selector.rate(np.array([xh]), bs, rmap, loc)[0]) - thr

    pieces = []
    for i0, i1 in runs:
        lo = -math.inf if i0 == 0 else _bisect(h, grid[i0 - 1], grid[i0])
        hi = math.inf if i1 == grid.size - 1 else _bisect(h, grid[i1], grid[i1 + 1])
        pieces.append((lo, hi))
    diag = f"{len(pieces)} separate pieces; hull reported" if len(pieces) > 1 else ""
    return OutageInterval.from_pieces(pieces, diag)


def meta_prob_bs(x: float, bs: int, selector, rmap: RadioMap, loc, n_nodes: int | None = None) -> float:
    """Phase-averaged Gaussian mass of the outage region for one BS."""
    interval = outage_interval(x, bs, selector, rmap, loc)
    if interval.empty:
        return 0.0
    sig = loc.sigma_grid(x, n_nodes)
    return float(np.clip(interval_mass(interval, x, sig).mean(), 0.0, 1.0))


def meta_prob(x: float, selector, rmap: RadioMap, loc, n_nodes: int | None = None) -> ReliabilityReport:
    """p~_eps(x) = sum_i p_i(x) meta_prob_bs(x, i)."""
    p = rmap.bs_select_prob(x)
    per = []
    for bs in (0, 1):
        m = meta_prob_bs(x, bs, selector, rmap, loc, n_nodes) if p[bs] > 0 else 0.0
        per.append((m, float(p[bs])))
    total = sum(m * w for m, w in per)
    return ReliabilityReport(x=float(x), meta_prob=float(total), per_bs=(per[0], per[1]))


def throughput_ratio(x: float, selector, rmap: RadioMap, loc, n_phase: int | None = None,
                     n_hermite: int | None = None) -> float:
    """omega_eps(x): expected successful rate over that of the ideal selector.

    Expectation over the BS choice, the scatter phases (trapezoid grid) and
    x_hat | phi (Gauss-Hermite), with the map CDF at the true location.
    """
    num_cfg = getattr(loc, "cfg", None)
    if n_phase is None:
        n_phase = num_cfg.numerics.throughput_phase_nodes if num_cfg is not None else 32
    if n_hermite is None:
        n_hermite = num_cfg.numerics.hermite_nodes if num_cfg is not None else 41
    t, w = hermite_rule(n_hermite)
    sig = np.asarray(loc.sigma_grid(x, n_phase), dtype=float).ravel()
    xhat = x + sig[:, None] * t[None, :]
    p = rmap.bs_select_prob(x)
    num = 0.0
    den = 0.0
    for bs in (0, 1):
        if p[bs] <= 0:
            continue
        rate = selector.rate(xhat.ravel(), bs, rmap, loc).reshape(xhat.shape)
        fail = rmap.outage_prob(rate.ravel(), x, bs).reshape(xhat.shape)
        num += p[bs] * float(np.mean((rate * (1.0 - fail)) @ w))
        den += p[bs] * rmap.eps_quantile(selector.eps, x, bs) * (1.0 - selector.eps)
    return num / den
