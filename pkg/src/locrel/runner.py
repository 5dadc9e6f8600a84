"""Experiment orchestration and result emission.

Tables are written as CSV with ``#``-prefixed provenance lines, or as JSON
checked against :data:`TABLE_SCHEMA`. Provenance is (config hash, seed,
package version) only, so reruns with the same inputs are byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analytic, reliability
from .config import SystemConfig
from .errors import Infeasible, ParseError, ValidationError
from .localization import LocalizationModel, phase_nodes, position_variance
from .radiomap import RadioMap, build_map
from .rateselect import CalibrationSpec, RateSelector, calibrated_selector, max_meta

TABLE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["provenance", "columns", "rows"],
    "additionalProperties": False,
    "properties": {
        "provenance": {
            "type": "object",
            "required": ["name", "config_hash", "seed", "version"],
            "properties": {
                "name": {"type": "string"},
                "config_hash": {"type": "string"},
                "seed": {"type": "integer"},
                "version": {"type": "string"},
            },
            "additionalProperties": {"type": ["string", "number", "integer", "boolean"]},
        },
        "columns": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "rows": {"type": "array", "items": {"type": "array", "items": {"type": ["number", "null"]}}},
    },
}


@dataclass
class ResultTable:
    name: str
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValidationError(f"table {self.name}: row length {len(r)} != {len(self.columns)} columns")

    @classmethod
    def from_columns(cls, name: str, cols: dict, provenance: dict) -> "ResultTable":
        arrays = [np.asarray(v, dtype=float).ravel() for v in cols.values()]
        rows = [[float(v) for v in row] for row in zip(*arrays)]
        return cls(name, list(cols), rows, dict(provenance))

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)


def provenance(name: str, cfg: SystemConfig, seed: int | None = None, **extra) -> dict:
    return {
        "name": name,
        "config_hash": cfg.hash(),
        "seed": int(cfg.numerics.seed if seed is None else seed),
        "version": __version__,
        **extra,
    }


def _fmt(v: float) -> str:
    return repr(float(v))


def to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    for k in sorted(table.provenance):
        buf.write(f"# {k}: {table.provenance[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_num(v):
    return None if not np.isfinite(v) else float(v)


def to_json(table: ResultTable) -> str:
    doc = {
        "provenance": table.provenance,
        "columns": table.columns,
        "rows": [[_json_num(v) for v in r] for r in table.rows],
    }
    validate_table_json(doc)
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def validate_table_json(doc: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(doc, TABLE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"table does not match schema: {exc.message}") from exc


def parse_csv(text: str) -> ResultTable:
    prov = {}
    lines = text.splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            prov[k] = v
        else:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ParseError("CSV has no header row")
    name = prov.get("name", "table")
    if "seed" in prov:
        prov["seed"] = int(prov["seed"])
    return ResultTable(name, rows[0], [[float(v) for v in r] for r in rows[1:]], prov)


def emit(table: ResultTable, fmt: str, path: str | Path | None) -> str:
    """Serialize ``table``; write it to ``path`` unless None. Returns the text."""
    if fmt == "csv":
        text = to_csv(table)
    elif fmt == "json":
        text = to_json(table)
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# plotting scripts (rendered by the user, never by this package)

_PLOT_HEAD = """import numpy as np
import matplotlib.pyplot as plt

def load(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith('#')]
    names = lines[0].strip().split(',')
    data = np.loadtxt(lines[1:], delimiter=',', ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}
"""

PLOT_SCRIPTS = {
    "fig1": _PLOT_HEAD + """
d = load('fig1.csv')
fig, ax = plt.subplots(2, 1, sharex=True)
ax[0].plot(d['x_m'], d['sigma_bar_m'])
ax[0].set_ylabel('sigma_bar [m]')
ax[1].semilogy(d['x_m'], d['q_bs1'], label='BS 1')
ax[1].semilogy(d['x_m'], d['q_bs2'], label='BS 2')
ax[1].set_xlabel('x [m]'); ax[1].set_ylabel('eps-quantile [bits/s/Hz]'); ax[1].legend()
fig.savefig('fig1.pdf')
""",
    "fig2": _PLOT_HEAD + """
d = load('fig2.csv')
e = load('fig2_edges.csv')
fig, ax = plt.subplots()
ax.semilogy(d['xhat_m'], d['p_out'], label='p_out(x, xhat; 1)')
ax.semilogy(d['xhat_m'], d['density'], label='density of xhat')
for v in (e['lo_m'][0], e['hi_m'][0]):
    ax.axvline(v, ls='--', c='k')
ax.set_xlabel('xhat [m]'); ax.legend()
fig.savefig('fig2.pdf')
""",
    "fig3": _PLOT_HEAD + """
d = load('fig3.csv')
fig, ax = plt.subplots(2, 1, sharex=True)
for s in ('backoff', 'ci', 'oracle'):
    ax[0].semilogy(d['x_m'], np.maximum(d['meta_' + s], 1e-30), label=s)
    ax[1].plot(d['x_m'], d['omega_' + s], label=s)
ax[0].set_ylabel('meta-probability'); ax[1].set_ylabel('throughput ratio')
ax[1].set_xlabel('x [m]'); ax[0].legend()
fig.savefig('fig3.pdf')
""",
}


# ---------------------------------------------------------------------------
# experiments


def fig_grid(cfg: SystemConfig) -> np.ndarray:
    n = cfg.numerics
    count = int(np.floor((n.fig_xmax - n.fig_xmin) / n.fig_step + 1e-9))
    return n.fig_xmin + n.fig_step * np.arange(count + 1)


def crlb_sweep(cfg: SystemConfig, xs, n_nodes: int | None = None) -> ResultTable:
    """Phase statistics of the localization standard deviation."""
    n = n_nodes or cfg.numerics.phase_nodes
    nodes = phase_nodes(n)
    cols = {"x_m": [], "sigma_bar_m": [], "var_min": [], "var_max": []}
    for x in xs:
        var = position_variance(float(x), nodes[:, None], nodes[None, :], cfg)
        cols["x_m"].append(x)
        cols["sigma_bar_m"].append(np.sqrt(var.mean()))
        cols["var_min"].append(var.min())
        cols["var_max"].append(var.max())
    return ResultTable.from_columns("crlb_sweep", cols, provenance("crlb_sweep", cfg, n_phase=n))


def fig1(cfg: SystemConfig, rmap: RadioMap, loc: LocalizationModel) -> ResultTable:
    eps = cfg.numerics.eps
    xs = fig_grid(cfg)
    cols = {
        "x_m": xs,
        "sigma_bar_m": [loc.average_std(float(x)) for x in xs],
        "q_bs1": rmap.eps_quantile(eps, xs, 0),
        "q_bs2": rmap.eps_quantile(eps, xs, 1),
    }
    return ResultTable.from_columns("fig1", cols, provenance("fig1", cfg, rmap.seed, eps=eps))


def fig2(cfg: SystemConfig, rmap: RadioMap, loc: LocalizationModel, x: float = 300.0,
         k: float = 0.25, bs: int = 0) -> tuple[ResultTable, ResultTable]:
    eps = cfg.numerics.eps
    sel = RateSelector("backoff", eps, k=k)
    xh = rmap.sel_x
    p_out = reliability.outage_prob_given_estimate(x, xh, bs, sel, rmap, loc)
    sig = loc.sigma_grid(x).ravel()
    dens = np.mean(np.exp(-0.5 * ((xh[:, None] - x) / sig) ** 2) / (np.sqrt(2 * np.pi) * sig), axis=1)
    iv = reliability.outage_interval(x, bs, sel, rmap, loc)
    prov = provenance("fig2", cfg, rmap.seed, eps=eps, k=k, x=x)
    curves = ResultTable.from_columns("fig2", {"xhat_m": xh, "p_out": p_out, "density": dens}, prov)
    edges = ResultTable.from_columns("fig2_edges", {
        "x_m": [x], "eps_quantile": [rmap.eps_quantile(eps, x, bs)], "lo_m": [iv.lo], "hi_m": [iv.hi],
        "meta_prob_bs": [reliability.meta_prob_bs(x, bs, sel, rmap, loc)],
    }, {**prov, "name": "fig2_edges"})
    return curves, edges


def calibrate_all(cfg: SystemConfig, rmap: RadioMap, loc: LocalizationModel) -> dict[str, RateSelector]:
    spec = CalibrationSpec.from_config(cfg)
    eps = cfg.numerics.eps
    back = calibrated_selector("backoff", spec, eps, rmap, loc)
    ci = calibrated_selector("ci", spec, eps, rmap, loc)
    from .rateselect import calibrate_oracle

    oracle = calibrate_oracle(spec, eps, rmap, loc, k_init=back.k)
    oracle.info.update({k: v for k, v in back.info.items() if k not in oracle.info})
    return {"backoff": back, "ci": ci, "oracle": oracle}


def fig3(cfg: SystemConfig, rmap: RadioMap, loc: LocalizationModel,
         selectors: dict[str, RateSelector] | None = None) -> ResultTable:
    selectors = selectors or calibrate_all(cfg, rmap, loc)
    spec = CalibrationSpec.from_config(cfg)
    for name, sel in selectors.items():
        worst, at = max_meta(sel, spec, rmap, loc)
        if worst > spec.delta:
            raise Infeasible(f"{name}: meta-probability {worst:.3g} at x={at} exceeds delta={spec.delta}")
    xs = fig_grid(cfg)
    cols = {"x_m": xs}
    for name, sel in selectors.items():
        cols[f"meta_{name}"] = [reliability.meta_prob(float(x), sel, rmap, loc).meta_prob for x in xs]
    for name, sel in selectors.items():
        cols[f"omega_{name}"] = [reliability.throughput_ratio(float(x), sel, rmap, loc) for x in xs]
    prov = provenance("fig3", cfg, rmap.seed, eps=cfg.numerics.eps, delta=spec.delta)
    if "backoff" in selectors:
        prov["k"] = selectors["backoff"].k
    if "ci" in selectors:
        prov["alpha"] = selectors["ci"].alpha
    return ResultTable.from_columns("fig3", cols, prov)


def run_figure(which: str, cfg: SystemConfig, out_dir: str | Path, rmap: RadioMap | None = None,
               loc: LocalizationModel | None = None, fmt: str = "csv",
               selectors: dict[str, RateSelector] | None = None) -> list[ResultTable]:
    """Compute one figure's tables and write them (plus a plot script) to ``out_dir``.

    On failure every file written by this call is removed again.
    """
    if which not in PLOT_SCRIPTS:
        raise ValidationError(f"unknown figure {which!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rmap = rmap if rmap is not None else build_map(cfg)
    loc = loc if loc is not None else LocalizationModel(cfg)
    written: list[Path] = []
    try:
        if which == "fig1":
            tables = [fig1(cfg, rmap, loc)]
        elif which == "fig2":
            tables = list(fig2(cfg, rmap, loc))
        else:
            selectors = selectors or calibrate_all(cfg, rmap, loc)
            tables = [fig3(cfg, rmap, loc, selectors)]
            for name, sel in selectors.items():
                p = out / f"calib_{name}.json"
                p.write_text(sel.dumps())
                written.append(p)
        for t in tables:
            p = out / f"{t.name}.{fmt}"
            emit(t, fmt, p)
            written.append(p)
        p = out / f"plot_{which}.py"
        p.write_text(PLOT_SCRIPTS[which])
        written.append(p)
    except BaseException:
        for p in written:
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            else:
                p.unlink(missing_ok=True)
        raise
    return tables


def analytic_table(cfg: SystemConfig, xs, k: float, eps: float) -> ResultTable:
    c = analytic.tail_constants(eps, cfg)
    xs = np.asarray(xs, dtype=float)
    cols = {
        "x_m": xs,
        "capacity": analytic.analytic_outage_capacity(eps, xs, cfg),
        "edge_exact_m": analytic.edge_exact(xs, k, eps, cfg),
        "edge_approx_m": analytic.edge_approx(xs, k),
    }
    return ResultTable.from_columns("analytic", cols, provenance(
        "analytic", cfg, psi=c.psi, psi_prime=c.psi_prime, k=k, eps=eps))
