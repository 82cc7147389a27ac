"""CSV tables, run manifests and plot-ready data files.

Numbers are written with 6 significant digits through ``format`` (never the
locale), NaN as ``nan``; every table has its header even when empty.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config
from .experiments import CellResult, PhasePoint, replication_seeds
from .fitting import FitError, FitResult, fit_boundary, fit_erf, fit_power_law

log = logging.getLogger(__name__)

CELL_COLUMNS = ("d", "C", "seed_base", "replications", "r0", "r1", "rho0", "m0")
BOUNDARY_COLUMNS = ("d", "C", "rho", "m", "phase")
FIT_COLUMNS = ("family", "domain_tag", "A", "beta", "alpha", "rmse", "n_points")
CURVE_SAMPLES = 200


class OutputError(RuntimeError):
    pass


class MissingFitError(KeyError):
    """A figure needs a fit family that is absent from fits.csv."""


def fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 1e6:
        return str(int(x))
    return format(x, ".6g")


def _num(s: str):
    return float(s) if s not in ("", "nan") else math.nan


def check_writable(out_dir) -> Path:
    """Create ``out_dir`` if needed and prove it accepts files."""
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / f".write-test-{os.getpid()}"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _write(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _read(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- tables -----------------------------------------------------------------

def cell_rows(cells) -> list[tuple]:
    rows = [(c.density, c.capacity, c.seed_base, c.replications, c.r0, c.r1, c.rho0, c.m0)
            for c in cells]
    return sorted(rows, key=lambda r: (r[0], r[1]))


def boundary_rows(points) -> list[tuple]:
    rows = [(p.density, p.capacity, p.rho, p.m, p.phase) for p in points]
    return sorted(rows, key=lambda r: (r[0], r[1], r[2], r[3], r[4]))


def fit_rows(fits) -> list[tuple]:
    rows = [(f.family, f.domain_tag, f.A, f.beta, f.alpha, f.rmse, f.n_points) for f in fits]
    return sorted(rows, key=lambda r: (r[0], r[1]))


def write_cells(path, cells):
    _write(Path(path), CELL_COLUMNS, cell_rows(cells))


def write_boundary(path, points):
    _write(Path(path), BOUNDARY_COLUMNS, boundary_rows(points))


def write_fits(path, fits):
    _write(Path(path), FIT_COLUMNS, fit_rows(fits))


def read_cells(path) -> list[CellResult]:
    out = []
    for row in _read(path):
        out.append(CellResult(capacity=_num(row["C"]), density=_num(row["d"]),
                              seed_base=int(float(row["seed_base"])),
                              replications=int(float(row["replications"])),
                              r0=_num(row["r0"]), r1=_num(row["r1"]), m0=_num(row["m0"])))
    return out


def read_boundary(path) -> list[PhasePoint]:
    return [PhasePoint(_num(r["rho"]), _num(r["m"]), r["phase"], _num(r["C"]), _num(r["d"]))
            for r in _read(path)]


def read_fits(path) -> list[FitResult]:
    out = []
    for r in _read(path):
        params = {"A": _num(r["A"]), "beta": _num(r["beta"])}
        if not math.isnan(_num(r["alpha"])):
            params["alpha"] = _num(r["alpha"])
        out.append(FitResult(r["family"], params, _num(r["rmse"]), int(float(r["n_points"])),
                             r["domain_tag"], space="log" if r["family"] == "power_law" else "linear"))
    return out


# -- fits over a sweep ------------------------------------------------------

def _dtag(quantity, d) -> str:
    return f"{quantity} d={fmt(d)}"


def fit_cells(cells) -> list[FitResult]:
    """Per-density fits: power laws for r0 and r1, erf for m0, boundary law for (rho0, m0)."""
    fits = []
    by_d = {}
    for c in cells:
        by_d.setdefault(c.density, []).append(c)

    def attempt(fn, pts, tag):
        try:
            fits.append(fn(pts, tag))
        except FitError as exc:
            log.warning("skipping fit %s: %s", tag, exc)

    for d, group in sorted(by_d.items()):
        group = sorted(group, key=lambda c: c.capacity)
        r0 = [(c.capacity, c.r0) for c in group if c.r0 > 0]
        r1 = [(c.capacity, c.r1) for c in group if c.r1 > 0]
        m0 = [(c.capacity, c.m0) for c in group if 0 < c.m0 <= 1]
        eq = [(c.rho0, c.m0) for c in group if 0 <= c.rho0 <= 1 and 0 <= c.m0 <= 1]
        attempt(fit_power_law, r0, _dtag("r0", d))
        attempt(fit_power_law, r1, _dtag("r1", d))
        attempt(fit_erf, m0, _dtag("m0", d))
        attempt(fit_boundary, eq, _dtag("rho0-m0", d))
    return fits


# -- manifest and the combined emitter --------------------------------------

def manifest_text(exp: ExperimentConfig, wall_time: float | None = None, extra: dict | None = None) -> str:
    lines = [f"version={__version__}", "# resolved configuration"]
    lines += dump_config(exp).splitlines()
    lines.append("# derived replication seeds: d,C,index,seed")
    for d in exp.densities:
        for c in exp.capacities:
            for i, s in enumerate(replication_seeds(exp, c, d)):
                lines.append(f"seed {fmt(d)},{fmt(c)},{i},{s}")
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}={v}")
    if wall_time is not None:
        lines.append(f"wall_time_s={wall_time:.3f}")
    return "\n".join(lines) + "\n"


def emit_results(out_dir, exp: ExperimentConfig, *, cells=(), points=(), fits=None,
                 wall_time=None, extra=None) -> dict:
    """Write cells.csv, boundary.csv, fits.csv and manifest.txt; returns their paths.

    ``fits=None`` fits the cells; pass an explicit list to override.
    """
    out = check_writable(out_dir)
    cells = list(cells)
    if fits is None:
        fits = fit_cells(cells)
    paths = {name: out / name for name in ("cells.csv", "boundary.csv", "fits.csv", "manifest.txt")}
    write_cells(paths["cells.csv"], cells)
    write_boundary(paths["boundary.csv"], points)
    write_fits(paths["fits.csv"], fits)
    paths["manifest.txt"].write_text(manifest_text(exp, wall_time, extra))
    return paths


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# -- plot data --------------------------------------------------------------

def _find_fit(fits, family, tag) -> FitResult:
    for f in fits:
        if f.family == family and f.domain_tag == tag:
            return f
    raise MissingFitError(f"no {family} fit for '{tag}'")


def _samples(lo, hi):
    return np.linspace(lo, hi, CURVE_SAMPLES)


def _block(header, rows) -> list[str]:
    out = ["# " + " ".join(header)]
    out += [" ".join(fmt(v) for v in row) for row in rows]
    return out + ["", ""]  # two blank lines separate gnuplot data sets


def figure2(cells, fits) -> str:
    """Measured r0 and r1 against C, with fitted curves, one block pair per density."""
    lines = []
    for d in sorted({c.density for c in cells}):
        group = sorted((c for c in cells if c.density == d), key=lambda c: c.capacity)
        f0 = _find_fit(fits, "power_law", _dtag("r0", d))
        f1 = _find_fit(fits, "power_law", _dtag("r1", d))
        lines.append(f"# density {fmt(d)}: measured")
        lines += _block(("C", "r0_measured", "r0_fit", "r1_measured", "r1_fit"),
                        [(c.capacity, c.r0, f0.predict(c.capacity), c.r1, f1.predict(c.capacity))
                         for c in group])
        lines.append(f"# density {fmt(d)}: fitted curves")
        xs = _samples(group[0].capacity, group[-1].capacity)
        lines += _block(("C", "r0_fit", "r1_fit"), zip(xs, f0.predict(xs), f1.predict(xs)))
    return "\n".join(lines)


def figure3(cells, fits) -> str:
    """Measured m0 against C with the erf fit."""
    lines = []
    for d in sorted({c.density for c in cells}):
        group = sorted((c for c in cells if c.density == d), key=lambda c: c.capacity)
        f = _find_fit(fits, "erf", _dtag("m0", d))
        lines.append(f"# density {fmt(d)}: measured")
        lines += _block(("C", "m0_measured", "m0_fit"), [(c.capacity, c.m0, f.predict(c.capacity)) for c in group])
        lines.append(f"# density {fmt(d)}: fitted curve")
        xs = _samples(group[0].capacity, group[-1].capacity)
        lines += _block(("C", "m0_fit"), zip(xs, f.predict(xs)))
    return "\n".join(lines)


def figure5(cells, fits=()) -> str:
    """(rho0, m0) per density and the unit-square diagonal m = 1 - rho."""
    lines = []
    for d in sorted({c.density for c in cells}):
        group = sorted((c for c in cells if c.density == d), key=lambda c: c.capacity)
        lines.append(f"# density {fmt(d)}")
        lines += _block(("rho0", "m0"), [(c.rho0, c.m0) for c in group])
    xs = _samples(0.0, 1.0)
    lines.append("# diagonal")
    lines += _block(("rho0", "m0"), zip(xs, 1.0 - xs))
    return "\n".join(lines)


FIGURES = {"fig2": figure2, "fig3": figure3, "fig5": figure5}


def plot_data(cells_csv, fits_csv, out_dir, figures=tuple(FIGURES)) -> dict:
    """Write ``<fig>.dat`` files; an empty cells table yields empty files and a warning."""
    out = check_writable(out_dir)
    cells = read_cells(cells_csv)
    fits = read_fits(fits_csv)
    paths = {}
    for name in figures:
        path = out / f"{name}.dat"
        if not cells:
            log.warning("cells table is empty; %s left empty", path)
            path.write_text("")
        else:
            path.write_text(FIGURES[name](cells, fits) + "\n")
        paths[name] = path
    return paths
