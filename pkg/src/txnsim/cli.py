"""Command-line front end: ``txnsim <subcommand> [--config F] [--set k=v ...]``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import ConfigError, parse_config
from .experiments import (CellResult, Runner, boundary_points, find_m0, find_r0, find_r1, sweep,
                          trace_boundary)
from .fitting import FitError, fit_boundary

log = logging.getLogger("txnsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--cache", default=None, help="directory caching individual runs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="txnsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-once", help="one simulation run; writes metrics.txt (and trace.csv)")
    _common(p)
    p.add_argument("--trace", action="store_true", help="also write the event trace")
    p.add_argument("--backend", choices=("fast", "reference"), default="fast")

    for name, text in (("find-r0", "largest abort-free injection rate"),
                       ("find-r1", "largest choke-free injection rate"),
                       ("find-m0", "smallest fault fraction choking the network at r0")):
        p = sub.add_parser(name, help=f"{text} for the configured (capacity, density)")
        _common(p)
    p = sub.add_parser("boundary", help="trace the (rho, m) phase boundary for one cell")
    _common(p)
    p = sub.add_parser("sweep", help="r0, r1, m0 over the capacity x density grid, plus fits")
    _common(p)
    p.add_argument("--no-m0", action="store_true", help="skip the m0 search")

    p = sub.add_parser("fit", help="fit the scaling laws to an existing cells.csv")
    _common(p)
    p.add_argument("--cells", help="cells.csv (default: <out>/cells.csv)")
    p = sub.add_parser("plot-data", help="write gnuplot-ready fig2/fig3/fig5 data files")
    _common(p)
    p.add_argument("--cells", help="cells.csv (default: <out>/cells.csv)")
    p.add_argument("--fits", help="fits.csv (default: <out>/fits.csv)")
    p.add_argument("--figures", default="fig2,fig3,fig5")
    return ap


def resolve_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return parse_config(args.config, overrides)


def _out(args) -> Path:
    return io.check_writable(args.out or ".")


def cmd_run_once(args, exp):
    out = _out(args) if args.out else None
    cfg = exp.base
    if args.backend == "fast":
        from .fast import simulate_fast
        metrics, trace = simulate_fast(cfg, trace=args.trace)
    else:
        from .engine import simulate
        metrics, trace = simulate(cfg, trace=args.trace)
    text = metrics.to_text()
    if out is None:
        sys.stdout.write(text)
        if args.trace:
            sys.stdout.write("\n".join(trace) + "\n")
        return
    (out / "metrics.txt").write_text(text)
    if args.trace:
        (out / "trace.csv").write_text("time,kind,txn,node,detail\n" + "".join(line + "\n" for line in trace))
    (out / "manifest.txt").write_text(io.manifest_text(exp.with_(capacities=(cfg.capacity,),
                                                                densities=(cfg.density,))))


def _single_cell(args, exp, what):
    out = _out(args)
    c, d = exp.base.capacity, exp.base.density
    cell_exp = exp.with_(capacities=(c,), densities=(d,))
    cell = CellResult(c, d, exp.seed, exp.replications)
    with io.Stopwatch() as sw, Runner(exp.workers, args.cache) as runner:
        if what == "r1":
            cell.r1 = find_r1(exp, c, d, runner).value
        else:
            cell.r0 = find_r0(exp, c, d, runner).value
            if what == "m0":
                cell.m0 = find_m0(exp, c, d, cell.r0, runner).value
    io.emit_results(out, cell_exp, cells=[cell], fits=[], wall_time=sw.elapsed)
    sys.stdout.write((out / "cells.csv").read_text())


def cmd_boundary(args, exp):
    out = _out(args)
    c, d = exp.base.capacity, exp.base.density
    cell_exp = exp.with_(capacities=(c,), densities=(d,))
    with io.Stopwatch() as sw, Runner(exp.workers, args.cache) as runner:
        cell = CellResult(c, d, exp.seed, exp.replications)
        cell.r1 = find_r1(exp, c, d, runner).value
        points = trace_boundary(exp, c, d, cell.r1, runner)
    fits = []
    try:
        fits.append(fit_boundary(boundary_points(points), f"boundary C={io.fmt(c)} d={io.fmt(d)}"))
    except FitError as exc:  # too few boundary points is not fatal
        log.warning("boundary fit skipped: %s", exc)
    io.emit_results(out, cell_exp, cells=[cell], points=points, fits=fits, wall_time=sw.elapsed)


def cmd_sweep(args, exp):
    out = _out(args)
    with io.Stopwatch() as sw, Runner(exp.workers, args.cache) as runner:
        cells = sweep(exp, runner, with_m0=not args.no_m0)
    failed = [c for c in cells if c.error]
    for c in failed:
        log.error("cell C=%s d=%s: %s", c.capacity, c.density, c.error)
    io.emit_results(out, exp, cells=cells, wall_time=sw.elapsed, extra={"failed_cells": len(failed)})


def cmd_fit(args, exp):
    out = _out(args)
    cells = io.read_cells(args.cells or out / "cells.csv")
    io.write_fits(out / "fits.csv", io.fit_cells(cells))
    sys.stdout.write((out / "fits.csv").read_text())


def cmd_plot_data(args, exp):
    out = _out(args)
    figs = tuple(f for f in args.figures.split(",") if f)
    unknown = [f for f in figs if f not in io.FIGURES]
    if unknown:
        raise ConfigError("figures", ",".join(unknown), "one of " + ",".join(io.FIGURES))
    io.plot_data(args.cells or out / "cells.csv", args.fits or out / "fits.csv", out, figs)


COMMANDS = {
    "run-once": cmd_run_once,
    "find-r0": lambda a, e: _single_cell(a, e, "r0"),
    "find-r1": lambda a, e: _single_cell(a, e, "r1"),
    "find-m0": lambda a, e: _single_cell(a, e, "m0"),
    "boundary": cmd_boundary,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args, exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
