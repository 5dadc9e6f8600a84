"""Command-line interface: ``locrel <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input, 3 infeasible calibration,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytic, channel, errors, reliability, runner
from .config import load_config
from .localization import LocalizationModel
from .radiomap import RadioMap, build_map
from .rateselect import CalibrationSpec, RateSelector, calibrated_selector

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

_INVALID = (errors.ValidationError, errors.ParseError, errors.OutOfMapRange, errors.InvalidDomain,
            errors.InsufficientSamples, FileNotFoundError)
_NUMERICAL = (errors.IllConditioned, errors.SingularModel, errors.DegenerateGeometry,
              errors.NonMonotoneSelector, FloatingPointError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration (missing keys take defaults)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output file or directory (default: stdout)")
    p.add_argument("--threads", type=int, default=None, help="numba worker threads")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="locrel", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    mp = sub.add_parser("map", help="build or query a radio map")
    msub = mp.add_subparsers(dest="map_cmd", required=True)
    mb = msub.add_parser("build")
    _common(mb)
    mq = msub.add_parser("query")
    _common(mq)
    mq.add_argument("--map", required=True)
    mq.add_argument("--x", type=float, required=True)
    mq.add_argument("--bs", type=int, choices=(1, 2), default=1)
    mq.add_argument("--eps", type=float, default=None)
    mq.add_argument("--rate", type=float, default=None, help="also report F(rate; x, bs)")

    cs = sub.add_parser("crlb-sweep", help="localization std over x")
    _common(cs)
    cs.add_argument("--xmin", type=float, default=10.0)
    cs.add_argument("--xmax", type=float, default=990.0)
    cs.add_argument("--step", type=float, default=10.0)

    cal = sub.add_parser("calibrate", help="calibrate a rate selector")
    _common(cal)
    cal.add_argument("--scheme", choices=("backoff", "ci", "oracle"), required=True)
    cal.add_argument("--map")
    cal.add_argument("--delta", type=float)
    cal.add_argument("--eps", type=float)
    cal.add_argument("--xmin", type=float)
    cal.add_argument("--xmax", type=float)
    cal.add_argument("--xstep", type=float)

    for name in ("meta", "throughput"):
        p = sub.add_parser(name, help=f"{name} over a grid of true locations")
        _common(p)
        p.add_argument("--selector", required=True, help="calibration record (JSON)")
        p.add_argument("--map")
        p.add_argument("--xmin", type=float, default=10.0)
        p.add_argument("--xmax", type=float, default=990.0)
        p.add_argument("--step", type=float, default=10.0)

    an = sub.add_parser("analytic", help="single-subcarrier closed forms")
    _common(an)
    an.add_argument("--x", type=float, nargs="+", required=True)
    an.add_argument("--k", type=float, default=0.25)
    an.add_argument("--eps", type=float, default=None)

    fg = sub.add_parser("figure", help="reproduce a figure's data")
    _common(fg)
    fg.add_argument("which", choices=("fig1", "fig2", "fig3"))
    fg.add_argument("--map")

    st = sub.add_parser("selftest", help="fast consistency checks")
    _common(st)
    return ap


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(**{"numerics.seed": args.seed})
    threads = args.threads if args.threads is not None else cfg.numerics.threads
    if threads:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return cfg


def _map(args, cfg) -> RadioMap:
    if getattr(args, "map", None):
        rmap = RadioMap.load(args.map)
        if rmap.config_hash != cfg.hash():
            print(f"warning: map built for config {rmap.config_hash}, current is {cfg.hash()}",
                  file=sys.stderr)
        return rmap
    print("building radio map (no --map given) ...", file=sys.stderr)
    return build_map(cfg)


def _grid(lo, hi, step):
    return lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)


def _write(table: runner.ResultTable, args) -> None:
    if args.out and Path(args.out).is_dir():
        runner.emit(table, args.format, Path(args.out) / f"{table.name}.{args.format}")
    elif args.out:
        runner.emit(table, args.format, args.out)
    else:
        sys.stdout.write(runner.emit(table, args.format, None))


def _cmd_map(args, cfg) -> int:
    if args.map_cmd == "build":
        rmap = build_map(cfg, progress=lambda i, n: print(f"\rnode {i}/{n}", end="", file=sys.stderr))
        print(file=sys.stderr)
        path = args.out or "radiomap.json"
        rmap.save(path)
        print(f"wrote {path} (config {rmap.config_hash}, seed {rmap.seed})")
        return EXIT_OK
    rmap = RadioMap.load(args.map)
    eps = args.eps if args.eps is not None else cfg.numerics.eps
    bs = args.bs - 1
    out = {"x": args.x, "bs": args.bs, "eps": eps,
           "eps_quantile": rmap.eps_quantile(eps, args.x, bs),
           "p_select": rmap.bs_select_prob(args.x)[bs].item()}
    if args.rate is not None:
        out["outage_prob"] = rmap.outage_prob(args.rate, args.x, bs)
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _cmd_calibrate(args, cfg) -> int:
    over = {}
    if args.delta is not None:
        over["delta"] = args.delta
    if args.xmin is not None or args.xmax is not None:
        over["x_range"] = (args.xmin if args.xmin is not None else cfg.numerics.calib_xmin,
                           args.xmax if args.xmax is not None else cfg.numerics.calib_xmax)
    if args.xstep is not None:
        over["x_step"] = args.xstep
    spec = CalibrationSpec.from_config(cfg, **over)
    eps = args.eps if args.eps is not None else cfg.numerics.eps
    rmap = _map(args, cfg)
    sel = calibrated_selector(args.scheme, spec, eps, rmap, LocalizationModel(cfg))
    text = sel.dumps()
    if args.out:
        target = Path(args.out)
        if target.is_dir():
            target = target / f"calib_{args.scheme}.json"
        target.write_text(text)
        print(f"wrote {target}")
    else:
        print(text)
    return EXIT_OK


def _cmd_sweep(args, cfg) -> int:
    sel = RateSelector.from_dict(json.loads(Path(args.selector).read_text()))
    rmap = _map(args, cfg)
    loc = LocalizationModel(cfg)
    xs = _grid(args.xmin, args.xmax, args.step)
    prov = runner.provenance(args.cmd, cfg, rmap.seed, selector=sel.kind, eps=sel.eps)
    if args.cmd == "meta":
        reps = [reliability.meta_prob(float(x), sel, rmap, loc) for x in xs]
        cols = {"x_m": xs, "meta_prob": [r.meta_prob for r in reps],
                "meta_bs1": [r.per_bs[0][0] for r in reps], "meta_bs2": [r.per_bs[1][0] for r in reps],
                "p_sel1": [r.per_bs[0][1] for r in reps]}
    else:
        cols = {"x_m": xs, "omega": [reliability.throughput_ratio(float(x), sel, rmap, loc) for x in xs]}
    _write(runner.ResultTable.from_columns(args.cmd, cols, prov), args)
    return EXIT_OK


def _cmd_analytic(args, cfg) -> int:
    eps = args.eps if args.eps is not None else cfg.numerics.eps
    single = analytic.single_subcarrier(cfg)
    table = runner.analytic_table(single, args.x, args.k, eps)
    _write(table, args)
    return EXIT_OK


def _cmd_figure(args, cfg) -> int:
    rmap = _map(args, cfg)
    out = args.out or f"out_{args.which}"
    tables = runner.run_figure(args.which, cfg, out, rmap=rmap, fmt=args.format)
    for t in tables:
        print(f"wrote {Path(out) / (t.name + '.' + args.format)}")
    return EXIT_OK


def _cmd_selftest(args, cfg) -> int:
    from .localization import crlb, PhasePair
    from .radiomap import build_cdf, mar_sample
    from .rng import stream

    checks = []
    v1 = crlb(300.0, PhasePair(0.3, 1.2), cfg).variance
    v2 = crlb(300.0, PhasePair(0.3, 1.2), cfg.replace(tx_power_dbm=cfg.tx_power_dbm + 10)).variance
    checks.append(("crlb scales as 1/P_tx", abs(v1 / v2 - 10.0) < 1e-6))
    a, k_ = analytic.single_subcarrier(cfg), 0.25
    c = analytic.analytic_outage_capacity(cfg.numerics.eps, 300.0, a)
    x_hat = 300.0 - analytic.edge_exact(300.0, k_, cfg.numerics.eps, a)
    c_hat = analytic.analytic_outage_capacity(cfg.numerics.eps, x_hat, a)
    checks.append(("edge substitutes back", abs(k_ * c_hat / c - 1.0) < 1e-6))
    flat = mar_sample(300.0, 0, 0.0, cfg)
    snr = cfg.tx_power * channel.path_gain(300.0, cfg) / cfg.noise_power
    checks.append(("flat-channel MAR", abs(flat / (cfg.n_subcarriers * np.log2(1 + snr)) - 1) < 1e-9))
    s1 = build_cdf(300.0, 0, 10_000, cfg, stream(1, 9), eps_min=1e-2)
    s2 = build_cdf(300.0, 0, 10_000, cfg, stream(1, 9), eps_min=1e-2)
    checks.append(("seeded MAR draws repeat", np.array_equal(s1.rates, s2.rates)))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.cmd == "map":
            return _cmd_map(args, cfg)
        if args.cmd == "crlb-sweep":
            xs = _grid(args.xmin, args.xmax, args.step)
            _write(runner.crlb_sweep(cfg, xs), args)
            return EXIT_OK
        if args.cmd == "calibrate":
            return _cmd_calibrate(args, cfg)
        if args.cmd in ("meta", "throughput"):
            return _cmd_sweep(args, cfg)
        if args.cmd == "analytic":
            return _cmd_analytic(args, cfg)
        if args.cmd == "figure":
            return _cmd_figure(args, cfg)
        return _cmd_selftest(args, cfg)
    except errors.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INVALID as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
