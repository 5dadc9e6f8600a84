"""Location-based rate selection and calibration against the meta-probability.

Three selectors map an estimated location x_hat and serving BS to a rate:

backoff
    k F^{-1}(eps; x_hat, i)
conf_interval
    min of F^{-1}(eps; ., i) over [x_hat -+ z_{1-alpha/2} sigma_bar(x_hat)]
oracle
    a table over the x_hat grid (nearest-cell lookup), found by a greedy search

Calibration picks the most aggressive parameter whose meta-probability stays
below delta at every true location of a :class:`CalibrationSpec` grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import reliability
from .config import SystemConfig
from .errors import Infeasible, OutOfMapRange, ValidationError
from .quadrature import normal_quantile
from .radiomap import RadioMap

K_MIN = 1e-3
K_TOL = 1e-3
ALPHA_MIN = 1e-15
ALPHA_MAX = 1.0 - 1e-12
ALPHA_RATIO_TOL = 1.5
ORACLE_RATIO = 1.01


@dataclass(frozen=True)
class CalibrationSpec:
    delta: float
    x_range: tuple[float, float] = (45.0, 955.0)
    x_step: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0, 1)")
        if not self.x_range[0] <= self.x_range[1] or self.x_step <= 0:
            raise ValidationError("calibration grid is empty")

    @classmethod
    def from_config(cls, cfg: SystemConfig, **over) -> "CalibrationSpec":
        n = cfg.numerics
        kw = dict(delta=n.delta, x_range=(n.calib_xmin, n.calib_xmax), x_step=n.calib_step)
        kw.update(over)
        return cls(**kw)

    def grid(self) -> np.ndarray:
        lo, hi = self.x_range
        n = int(math.floor((hi - lo) / self.x_step + 1e-9))
        return lo + self.x_step * np.arange(n + 1)


@dataclass(frozen=True)
class OracleTable:
    x0: float
    step: float
    rates: np.ndarray  # (2, n_cells)

    @property
    def grid(self) -> np.ndarray:
        return self.x0 + self.step * np.arange(self.rates.shape[1])

    def index(self, xhat) -> np.ndarray:
        idx = np.rint((np.asarray(xhat, dtype=float) - self.x0) / self.step).astype(np.int64)
        return np.clip(idx, 0, self.rates.shape[1] - 1)


class _SparseMin:
    """O(1) range-minimum queries over a fixed array."""

    def __init__(self, values: np.ndarray):
        levels = [np.asarray(values, dtype=float)]
        span = 1
        while 2 * span <= levels[0].size:
            prev = levels[-1]
            levels.append(np.minimum(prev[:-span], prev[span:]))
            span *= 2
        self.levels = levels

    def query(self, i, j) -> np.ndarray:
        """min(values[i..j]) for i <= j (inclusive, arrays allowed)."""
        i = np.asarray(i)
        j = np.asarray(j)
        length = j - i + 1
        lev = np.floor(np.log2(np.maximum(length, 1))).astype(np.int64)
        out = np.empty(np.broadcast(i, j).shape)
        for k in np.unique(lev):
            sel = lev == k
            arr = self.levels[k]
            out[sel] = np.minimum(arr[i[sel]], arr[j[sel] - (1 << k) + 1])
        return out


def _map_cache(rmap: RadioMap) -> dict:
    cache = rmap.__dict__.get("_selector_cache")
    if cache is None:
        cache = {}
        rmap.__dict__["_selector_cache"] = cache
    return cache


def _quantile_grid(rmap: RadioMap, eps: float, bs: int):
    key = ("q", eps, bs)
    cache = _map_cache(rmap)
    if key not in cache:
        q = np.asarray(rmap.eps_quantile(eps, rmap.sel_x, bs), dtype=float)
        cache[key] = (q, _SparseMin(q))
    return cache[key]


def backoff_rate(xhat, bs: int, k: float, eps: float, rmap: RadioMap):
    return k * np.asarray(rmap.eps_quantile(eps, rmap.clamp(xhat), bs))


def confidence_interval(xhat, alpha: float, loc) -> tuple[np.ndarray, np.ndarray]:
    xhat = np.asarray(xhat, dtype=float)
    half = normal_quantile(1.0 - alpha / 2.0) * loc.sigma_bar(xhat)
    return xhat - half, xhat + half


def ci_rate(xhat, bs: int, alpha: float, eps: float, rmap: RadioMap, loc):
    """Minimum eps-quantile over the approximate confidence interval of x_hat.

    Between map grid points the quantile is linear, so the minimum over the
    interval is attained at a grid point inside it or at an end point.
    """
    scalar = np.ndim(xhat) == 0
    a, b = confidence_interval(np.atleast_1d(xhat), alpha, loc)
    a, b = rmap.clamp(a), rmap.clamp(b)
    q, rmq = _quantile_grid(rmap, eps, bs)
    grid = rmap.sel_x
    step = grid[1] - grid[0]
    ends = np.minimum(rmap.eps_quantile(eps, a, bs), rmap.eps_quantile(eps, b, bs))
    i = np.clip(np.ceil((a - grid[0]) / step - 1e-9).astype(np.int64), 0, grid.size - 1)
    j = np.clip(np.floor((b - grid[0]) / step + 1e-9).astype(np.int64), 0, grid.size - 1)
    inner = np.full(ends.shape, np.inf)
    ok = i <= j
    if np.any(ok):
        inner[ok] = rmq.query(i[ok], j[ok])
    out = np.minimum(ends, inner)
    return float(out[0]) if scalar else out


def oracle_rate(xhat, bs: int, table: OracleTable):
    out = table.rates[bs][table.index(xhat)]
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class RateSelector:
    kind: str
    eps: float
    k: float | None = None
    alpha: float | None = None
    table: OracleTable | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "backoff":
            if self.k is None or not 0.0 < self.k <= 1.0:
                raise ValidationError("backoff selector needs 0 < k <= 1")
        elif self.kind == "conf_interval":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValidationError("CI selector needs 0 < alpha < 1")
        elif self.kind == "oracle":
            if self.table is None:
                raise ValidationError("oracle selector needs a table")
        else:
            raise ValidationError(f"unknown selector kind {self.kind!r}")
        if not 0.0 < self.eps < 1.0:
            raise ValidationError("eps must lie in (0, 1)")

    def rate(self, xhat, bs: int, rmap: RadioMap, loc=None):
        if self.kind == "backoff":
            return backoff_rate(xhat, bs, self.k, self.eps, rmap)
        if self.kind == "conf_interval":
            return ci_rate(xhat, bs, self.alpha, self.eps, rmap, loc)
        return oracle_rate(xhat, bs, self.table)

    def cell_edges(self) -> np.ndarray:
        g = self.table.grid
        mid = 0.5 * (g[1:] + g[:-1])
        return np.concatenate([[-np.inf], mid, [np.inf]])

    # ---- calibration records ----------------------------------------------
    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "eps": self.eps, "info": self.info}
        if self.kind == "backoff":
            doc["k"] = self.k
        elif self.kind == "conf_interval":
            doc["alpha"] = self.alpha
        else:
            doc["table"] = {"x0": self.table.x0, "step": self.table.step, "rates": self.table.rates.tolist()}
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "RateSelector":
        table = None
        if doc.get("kind") == "oracle":
            t = doc["table"]
            table = OracleTable(x0=t["x0"], step=t["step"], rates=np.array(t["rates"], dtype=float))
        return cls(kind=doc["kind"], eps=doc["eps"], k=doc.get("k"), alpha=doc.get("alpha"),
                   table=table, info=doc.get("info", {}))


def ideal_selector(eps: float) -> RateSelector:
    """k = 1: the eps-outage capacity at the estimate."""
    return RateSelector("backoff", eps, k=1.0)


# ---------------------------------------------------------------------------
# calibration


def max_meta(selector: RateSelector, spec: CalibrationSpec, rmap: RadioMap, loc) -> tuple[float, float]:
    """Largest meta-probability over the calibration grid and where it occurs."""
    best, at = -1.0, math.nan
    for x in spec.grid():
        m = reliability.meta_prob(float(x), selector, rmap, loc).meta_prob
        if m > best:
            best, at = m, float(x)
    return best, at


def _check_range(spec: CalibrationSpec, rmap: RadioMap) -> None:
    lo, hi = rmap.x_range
    if spec.x_range[0] < lo or spec.x_range[1] > hi:
        raise OutOfMapRange("calibration range exceeds the radio map")


def calibrate_backoff(spec: CalibrationSpec, eps: float, rmap: RadioMap, loc) -> float:
    """Largest k (to K_TOL) with max meta-probability <= delta on the grid."""
    _check_range(spec, rmap)

    def feasible(k):
        return max_meta(RateSelector("backoff", eps, k=k), spec, rmap, loc)[0] <= spec.delta

    if feasible(1.0):
        return 1.0
    if not feasible(K_MIN):
        raise Infeasible(f"backoff with k={K_MIN} still violates delta={spec.delta}")
    lo, hi = K_MIN, 1.0
    while hi - lo > K_TOL:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def calibrate_ci(spec: CalibrationSpec, eps: float, rmap: RadioMap, loc) -> float:
    """Largest alpha (to a factor ALPHA_RATIO_TOL) meeting the constraint."""
    _check_range(spec, rmap)

    def feasible(alpha):
        return max_meta(RateSelector("conf_interval", eps, alpha=alpha), spec, rmap, loc)[0] <= spec.delta

    if feasible(ALPHA_MAX):
        return ALPHA_MAX
    if not feasible(ALPHA_MIN):
        raise Infeasible(f"CI selector with alpha={ALPHA_MIN} still violates delta={spec.delta}")
    lo, hi = math.log(ALPHA_MIN), math.log(ALPHA_MAX)
    while hi - lo > math.log(ALPHA_RATIO_TOL):
        mid = 0.5 * (lo + hi)
        if feasible(math.exp(mid)):
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


def _cell_masses(x: float, edges: np.ndarray, loc, n_nodes=None, width: float = 12.0):
    """Phase-averaged Gaussian mass of every cell near x; (first index, masses)."""
    sig = np.asarray(loc.sigma_grid(x, n_nodes), dtype=float).ravel()
    reach = width * sig.max()
    i0 = max(int(np.searchsorted(edges, x - reach)) - 1, 0)
    i1 = min(int(np.searchsorted(edges, x + reach)) + 1, edges.size - 1)
    e = edges[i0:i1 + 1]
    mass = reliability.gauss_mass(e[:-1][None, :], e[1:][None, :], x, sig[:, None]).mean(axis=0)
    return i0, mass


def calibrate_oracle(spec: CalibrationSpec, eps: float, rmap: RadioMap, loc,
                     k_init: float | None = None, max_passes: int = 10_000) -> RateSelector:
    """Greedy coordinate ascent on the oracle table.

    Every cell of the x_hat grid starts at the calibrated backoff rate. Each
    pass tries to raise every (cell, BS) entry by one step of a geometric
    ladder capped at F^{-1}(eps; x_hat, i), keeping a step only if the
    meta-probability stays <= delta at all true locations. The search stops
    when a pass changes nothing.
    """
    _check_range(spec, rmap)
    if k_init is None:
        k_init = calibrate_backoff(spec, eps, rmap, loc)
    grid = rmap.sel_x
    step = float(grid[1] - grid[0])
    ceil = np.stack([_quantile_grid(rmap, eps, bs)[0] for bs in (0, 1)])
    rates = k_init * ceil
    table = OracleTable(x0=float(grid[0]), step=step, rates=rates)
    sel = RateSelector("oracle", eps, table=table)
    edges = sel.cell_edges()
    xs = spec.grid()
    nx = xs.size
    # dense mass matrix restricted to a window around each x
    mass = np.zeros((nx, grid.size))
    for r, x in enumerate(xs):
        i0, m = _cell_masses(float(x), edges, loc)
        mass[r, i0:i0 + m.size] = m
    p = np.array([rmap.bs_select_prob(float(x)) for x in xs])  # (nx, 2)
    thr = np.stack([np.asarray(rmap.eps_quantile(eps, xs, bs)) for bs in (0, 1)], axis=1)  # (nx, 2)
    weight = mass[:, None, :] * p[:, :, None]  # (nx, 2, cells)
    active = rates[None, :, :] > thr[:, :, None]
    meta = np.einsum("xbc,xbc->x", weight, active)
    if np.any(meta > spec.delta):
        raise Infeasible("initial oracle table violates the constraint")

    for _ in range(max_passes):
        changed = False
        for bs in (0, 1):
            for c in range(grid.size):
                cur = rates[bs, c]
                if cur >= ceil[bs, c]:
                    continue
                new = min(cur * ORACLE_RATIO, ceil[bs, c]) if cur > 0 else ceil[bs, c]
                turned = (thr[:, bs] >= cur) & (thr[:, bs] < new)
                if np.any(turned):
                    trial = meta + weight[:, bs, c] * turned
                    if np.any(trial > spec.delta):
                        continue
                    meta = trial
                rates[bs, c] = new
                changed = True
        if not changed:
            break
    sel.info.update({"k_init": k_init, "max_meta_grid": float(meta.max())})
    return sel


def calibrated_selector(scheme: str, spec: CalibrationSpec, eps: float, rmap: RadioMap, loc) -> RateSelector:
    """Run one calibration and wrap the result as a selector with provenance."""
    if scheme == "backoff":
        sel = RateSelector("backoff", eps, k=calibrate_backoff(spec, eps, rmap, loc))
    elif scheme in ("ci", "conf_interval"):
        sel = RateSelector("conf_interval", eps, alpha=calibrate_ci(spec, eps, rmap, loc))
    elif scheme == "oracle":
        sel = calibrate_oracle(spec, eps, rmap, loc)
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    sel.info.update({
        "delta": spec.delta,
        "x_range": list(spec.x_range),
        "x_step": spec.x_step,
        "map_config_hash": rmap.config_hash,
        "map_seed": rmap.seed,
    })
    return sel
