"""Location-indexed statistics of the maximum achievable rate (MAR).

The MAR of one channel use is ``sum_j log2(1 + P_tx |h_j|^2 / sigma_n^2)``.
Writing the scatter coefficient relative to the LoS coefficient,
``h_j = a_los d_j(tau_los) (1 + z w_j)`` with ``z ~ CN(0, exp(-dtau/rho)/rho)``
and ``w_j = exp(-j 2 pi j df dtau)``, the distribution of ``z`` does not depend
on the location. The map therefore reuses one set of ``z`` draws for every
distance (common random numbers). Each draw's MAR is non-decreasing in the
SNR, so every empirical quantile is non-increasing in the distance to the
serving BS, exactly and without Monte-Carlo jitter between grid points.

Storage:

* full order-statistic tables at geometrically spaced distance nodes, used
  for CDF queries at arbitrary rates;
* the eps-quantile for each configured eps level on the fine distance grid
  (``map_step``), exact order statistics computed from a candidate subset;
* BS-selection probabilities on the x grid.

Both BSs share the same channel parameters, so all channel statistics are
stored as functions of the distance to the serving BS.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import channel
from .config import SystemConfig
from .errors import InsufficientSamples, OutOfMapRange, ParseError, QuantileUnresolvable
from .rng import STREAM_PING, STREAM_SCATTER, stream

# the TBB layer shipped with some distributions is too old and only warns
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

FORMAT = "locrel.radiomap"
VERSION = 1
_LOG_BUDGET = 600.0  # max natural log of a running product before flushing
_CHUNK = 512


@numba.njit(parallel=True, fastmath=True, cache=True)
def _mar_kernel(snr, zr, zi, cb, sb, block, out):  # pragma: no cover - compiled
    n = zr.size
    m = cb.size
    n_chunks = (n + _CHUNK - 1) // _CHUNK
    for c in numba.prange(n_chunks):
        k0 = c * _CHUNK
        kk = min(_CHUNK, n - k0)
        a = np.empty(kk)
        bx = np.empty(kk)
        by = np.empty(kk)
        p = np.ones(kk)
        acc = np.zeros(kk)
        for t in range(kk):
            k = k0 + t
            a[t] = 1.0 + snr * (1.0 + zr[k] * zr[k] + zi[k] * zi[k])
            bx[t] = 2.0 * snr * zr[k]
            by[t] = 2.0 * snr * zi[k]
        cnt = 0
        for j in range(m):
            cj = cb[j]
            sj = sb[j]
            for t in range(kk):
                p[t] *= a[t] + bx[t] * cj + by[t] * sj
            cnt += 1
            if cnt == block or j == m - 1:
                for t in range(kk):
                    acc[t] += np.log(p[t])
                    p[t] = 1.0
                cnt = 0
        for t in range(kk):
            out[k0 + t] = acc[t] * 1.4426950408889634


def _phase_steps(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    beta = 2.0 * np.pi * cfg.subcarrier_spacing * cfg.excess_delay_s * np.arange(cfg.n_subcarriers)
    return np.cos(beta), np.sin(beta)


def snr_at(d, cfg: SystemConfig):
    """Mean LoS SNR per subcarrier, P_tx P_L(d) / sigma_n^2."""
    return cfg.tx_power * channel.path_gain(d, cfg) / cfg.noise_power


def mar_from_ratio(snr: float, z: np.ndarray, cfg: SystemConfig, steps=None) -> np.ndarray:
    """MAR for scatter-to-LoS ratios ``z`` at LoS SNR ``snr``."""
    cb, sb = steps if steps is not None else _phase_steps(cfg)
    z = np.asarray(z, dtype=complex).ravel()
    out = np.empty(z.size)
    if z.size == 0:
        return out
    peak = 1.0 + snr * (1.0 + np.abs(z).max()) ** 2
    block = int(max(1, min(32, _LOG_BUDGET // max(np.log(peak), 1e-300))))
    _mar_kernel(float(snr), np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), cb, sb, block, out)
    return out


def mar_sample(x: float, bs: int, a_scatter, cfg: SystemConfig):
    """Instantaneous MAR (bits/s/Hz summed over subcarriers) for given scatter draws."""
    h = channel.freq_response(x, bs, a_scatter, cfg)
    val = np.sum(np.log2(1.0 + cfg.tx_power * np.abs(h) ** 2 / cfg.noise_power), axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def order_rank(eps: float, n: int) -> int:
    """1-based rank of the lower order statistic used as the eps-quantile."""
    return max(1, math.ceil(eps * n - 1e-9 * eps * n))


@dataclass(frozen=True)
class MarSampleSet:
    location: float
    bs: int
    rates: np.ndarray  # sorted ascending

    @property
    def n_samples(self) -> int:
        return self.rates.size

    def quantile(self, eps: float) -> float:
        if eps < 1.0 / self.n_samples:
            raise QuantileUnresolvable(f"eps={eps} needs more than {self.n_samples} samples")
        return float(self.rates[order_rank(eps, self.n_samples) - 1])

    def cdf(self, rate):
        return np.searchsorted(self.rates, rate, side="right") / self.n_samples


def build_cdf(x: float, bs: int, n_samples: int, cfg: SystemConfig, rng: np.random.Generator,
              eps_min: float | None = None) -> MarSampleSet:
    """Sorted MAR draws at one location (thermal noise does not enter the MAR)."""
    eps_min = min(cfg.numerics.map_eps_levels) if eps_min is None else eps_min
    if n_samples < 10.0 / eps_min:
        raise InsufficientSamples(f"need at least {math.ceil(10 / eps_min)} samples for eps={eps_min}")
    d = float(channel.distance(x, bs, cfg))
    z = np.sqrt(channel.scatter_ratio(cfg) / 2.0) * (
        rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples)
    )
    rates = np.sort(mar_from_ratio(snr_at(d, cfg), z, cfg))
    return MarSampleSet(location=float(x), bs=bs, rates=rates)


def mc_quantile(x: float, bs: int, eps: float, n_samples: int, cfg: SystemConfig,
                rng: np.random.Generator, chunk: int = 5_000_000) -> float:
    """eps-quantile of the MAR from ``n_samples`` draws, generated in chunks.

    Same order-statistic convention as :class:`MarSampleSet`, but only the
    lower tail is kept in memory, so very large sample counts are cheap.
    """
    if eps < 10.0 / n_samples:
        raise InsufficientSamples(f"need at least {math.ceil(10 / eps)} samples for eps={eps}")
    d = float(channel.distance(x, bs, cfg))
    snr = snr_at(d, cfg)
    steps = _phase_steps(cfg)
    rank = order_rank(eps, n_samples)
    scale = np.sqrt(channel.scatter_ratio(cfg) / 2.0)
    keep = np.empty(0)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        z = scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
        vals = np.concatenate([keep, mar_from_ratio(snr, z, cfg, steps)])
        if vals.size > rank:
            vals = np.partition(vals, rank - 1)[:rank]
        keep = vals
        done += m
    return float(np.max(keep))


def bs_selection_prob(x: float, n_mc: int, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Probability that each BS delivers the stronger ping."""
    dmin = cfg.numerics.min_bs_distance
    for bs in (0, 1):
        if float(channel.distance(x, bs, cfg)) < dmin:
            p = np.zeros(2)
            p[bs] = 1.0
            return p
    e1 = channel.ping_energy(x, 0, n_mc, cfg, rng)
    e2 = channel.ping_energy(x, 1, n_mc, cfg, rng)
    wins = int(np.count_nonzero(e1 > e2))
    return np.array([wins / n_mc, (n_mc - wins) / n_mc])


def _table_ranks(n: int, levels: int, eps_levels) -> np.ndarray:
    half = max(levels // 2, 1)
    low = np.round(np.geomspace(1, max(n / 2, 1), half))
    high = n + 1 - low
    extra = [order_rank(e, n) for e in eps_levels]
    ranks = np.unique(np.concatenate([low, high, extra, [1, n]]).astype(np.int64))
    return ranks[(ranks >= 1) & (ranks <= n)]


@dataclass
class RadioMap:
    """Immutable-by-convention radio map; see the module docstring."""

    bs_positions: tuple[float, float]
    x_range: tuple[float, float]
    d_min: float
    n_samples: int
    seed: int
    config_hash: str
    eps_levels: tuple[float, ...]
    node_d: np.ndarray  # coarse distances (m)
    ranks: np.ndarray  # 1-based order-statistic ranks of the table columns
    table: np.ndarray  # (len(node_d), len(ranks)) MAR order statistics
    fine_d: np.ndarray  # fine distance grid (m)
    fine_q: np.ndarray  # (len(eps_levels), len(fine_d)) eps-quantiles
    sel_x: np.ndarray  # x grid for BS selection
    sel_p1: np.ndarray  # P(select BS 1)
    meta: dict = field(default_factory=dict)

    # ---- geometry -------------------------------------------------------
    def distance(self, x, bs: int):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any((x < lo - tol) | (x > hi + tol)):
            raise OutOfMapRange(f"x outside map range [{lo}, {hi}]")
        return np.maximum(np.abs(x - self.bs_positions[bs]), self.d_min)

    def clamp(self, x):
        return np.clip(x, *self.x_range)

    # ---- quantiles ------------------------------------------------------
    def _level(self, eps: float) -> int | None:
        for i, e in enumerate(self.eps_levels):
            if math.isclose(e, eps, rel_tol=1e-12):
                return i
        return None

    def _table_rows(self, d) -> np.ndarray:
        ld = np.log(np.atleast_1d(np.asarray(d, dtype=float)))
        nodes = np.log(self.node_d)
        idx = np.clip(np.searchsorted(nodes, ld), 1, nodes.size - 1)
        w = np.clip((ld - nodes[idx - 1]) / (nodes[idx] - nodes[idx - 1]), 0.0, 1.0)
        return self.table[idx - 1] * (1.0 - w)[:, None] + self.table[idx] * w[:, None]

    def quantile_at_distance(self, eps: float, d):
        if eps < 1.0 / self.n_samples:
            raise QuantileUnresolvable(
                f"eps={eps} is below the resolution 1/{self.n_samples} of the map"
            )
        lvl = self._level(eps)
        if lvl is not None:
            return np.interp(d, self.fine_d, self.fine_q[lvl])
        rank = eps * self.n_samples
        rows = self._table_rows(d)
        out = np.array([np.interp(rank, self.ranks, r) for r in rows])
        return out.reshape(np.shape(d))

    def eps_quantile(self, eps: float, x, bs: int):
        """F^{-1}(eps; x, bs)."""
        q = self.quantile_at_distance(eps, self.distance(x, bs))
        return float(q) if np.ndim(q) == 0 else q

    # ---- CDF --------------------------------------------------------------
    def rates_at_distance(self, d: float) -> np.ndarray:
        """Order statistics at ``self.ranks`` for one distance.

        Table rows are interpolated linearly in log-distance. The row is then
        shifted so that it passes through the fine eps-quantile columns
        (shift interpolated in rank between eps levels, constant outside), so
        the CDF and the quantile agree exactly on the fine grid.
        """
        rates = self._table_rows(d)[0]
        cols = np.searchsorted(self.ranks, [order_rank(e, self.n_samples) for e in self.eps_levels])
        fine = np.array([np.interp(d, self.fine_d, q) for q in self.fine_q])
        shift = np.interp(self.ranks, self.ranks[cols], fine - rates[cols])
        return np.maximum.accumulate(rates + shift)

    def cdf_at_distance(self, rate, d: float):
        rates = self.rates_at_distance(d)
        return np.interp(rate, rates, self.ranks / self.n_samples, left=0.0, right=1.0)

    def outage_prob(self, rate, x: float, bs: int):
        """F(R; x, bs) = P(R > R_max)."""
        p = self.cdf_at_distance(rate, float(self.distance(x, bs)))
        return float(p) if np.ndim(p) == 0 else p

    # ---- BS selection -----------------------------------------------------
    def bs_select_prob(self, x) -> np.ndarray:
        p1 = np.interp(x, self.sel_x, self.sel_p1)
        return np.stack([p1, 1.0 - p1], axis=-1)

    # ---- persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "header": {
                "config_hash": self.config_hash,
                "seed": self.seed,
                "n_samples": self.n_samples,
                "bs_positions": list(self.bs_positions),
                "x_range": list(self.x_range),
                "d_min": self.d_min,
                "eps_levels": list(self.eps_levels),
                "meta": self.meta,
            },
            "node_d": self.node_d.tolist(),
            "ranks": self.ranks.tolist(),
            "table": self.table.tolist(),
            "fine_d": self.fine_d.tolist(),
            "fine_q": self.fine_q.tolist(),
            "sel_x": self.sel_x.tolist(),
            "sel_p1": self.sel_p1.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, doc: dict) -> "RadioMap":
        if doc.get("format") != FORMAT:
            raise ParseError("not a radio map file")
        if doc.get("version") != VERSION:
            raise ParseError(f"unsupported radio map version {doc.get('version')}")
        h = doc["header"]
        return cls(
            bs_positions=tuple(h["bs_positions"]),
            x_range=tuple(h["x_range"]),
            d_min=h["d_min"],
            n_samples=h["n_samples"],
            seed=h["seed"],
            config_hash=h["config_hash"],
            eps_levels=tuple(h["eps_levels"]),
            node_d=np.array(doc["node_d"], dtype=float),
            ranks=np.array(doc["ranks"], dtype=np.int64),
            table=np.array(doc["table"], dtype=float).reshape(len(doc["node_d"]), len(doc["ranks"])),
            fine_d=np.array(doc["fine_d"], dtype=float),
            fine_q=np.array(doc["fine_q"], dtype=float).reshape(len(h["eps_levels"]), len(doc["fine_d"])),
            sel_x=np.array(doc["sel_x"], dtype=float),
            sel_p1=np.array(doc["sel_p1"], dtype=float),
            meta=h.get("meta", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RadioMap":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read radio map {path}: {exc}") from exc
        return cls.from_dict(doc)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.ceil((hi - lo) / step - 1e-9))
    return lo + step * np.arange(n + 1)


def build_map(cfg: SystemConfig, seed: int | None = None, progress=None) -> RadioMap:
    """Monte-Carlo radio map over the configured x range."""
    num = cfg.numerics
    seed = num.seed if seed is None else seed
    n = num.map_samples
    eps_levels = tuple(sorted(num.map_eps_levels))
    if n < 10.0 / eps_levels[0]:
        raise InsufficientSamples(
            f"map_samples={n} cannot resolve eps={eps_levels[0]} (need >= {math.ceil(10 / eps_levels[0])})"
        )
    dmin = num.min_bs_distance
    d_max = max(max(abs(num.map_xmin - b), abs(num.map_xmax - b)) for b in cfg.bs_positions)
    fine_d = _grid(dmin, max(d_max, dmin), num.map_step)
    d_top = fine_d[-1]
    n_nodes = max(2, int(math.ceil(math.log(d_top / dmin) / math.log(num.map_node_ratio))) + 1)
    node_d = np.geomspace(dmin, d_top, n_nodes)
    node_d[0], node_d[-1] = dmin, d_top

    ranks = _table_ranks(n, num.map_table_levels, eps_levels)
    eps_ranks = [order_rank(e, n) for e in eps_levels]
    rng = stream(seed, STREAM_SCATTER)
    z = np.sqrt(channel.scatter_ratio(cfg) / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    steps = _phase_steps(cfg)

    table = np.empty((n_nodes, ranks.size))
    fine_q = np.empty((len(eps_levels), fine_d.size))
    prev_q_top = None
    fi = 0
    for c, d in enumerate(node_d):
        full = mar_from_ratio(snr_at(d, cfg), z, cfg, steps)
        srt = np.sort(full)
        table[c] = srt[ranks - 1]
        if c > 0:
            # candidates for every fine node in (node_{c-1}, node_c): draws whose
            # MAR at the far node is below the largest tracked quantile at the
            # near node contain every draw below the quantile in between
            cand = z[full <= prev_q_top]
            while fi < fine_d.size and fine_d[fi] < d:
                vals = mar_from_ratio(snr_at(fine_d[fi], cfg), cand, cfg, steps)
                for lvl, r in enumerate(eps_ranks):
                    fine_q[lvl, fi] = np.partition(vals, r - 1)[r - 1]
                fi += 1
        while fi < fine_d.size and fine_d[fi] <= d:
            for lvl, r in enumerate(eps_ranks):
                fine_q[lvl, fi] = srt[r - 1]
            fi += 1
        prev_q_top = srt[eps_ranks[-1] - 1]
        if progress:
            progress(c + 1, n_nodes)

    sel_x = _grid(num.map_xmin, num.map_xmax, num.map_step)
    sel_p1 = np.array([
        bs_selection_prob(float(x), num.bs_select_mc, cfg, stream(seed, STREAM_PING, k))[0]
        for k, x in enumerate(sel_x)
    ])
    return RadioMap(
        bs_positions=cfg.bs_positions,
        x_range=(float(num.map_xmin), float(num.map_xmax)),
        d_min=dmin,
        n_samples=n,
        seed=seed,
        config_hash=cfg.hash(),
        eps_levels=eps_levels,
        node_d=node_d,
        ranks=ranks,
        table=table,
        fine_d=fine_d,
        fine_q=fine_q,
        sel_x=sel_x,
        sel_p1=sel_p1,
        meta={"map_step": num.map_step, "node_ratio": num.map_node_ratio, "bs_select_mc": num.bs_select_mc},
    )
