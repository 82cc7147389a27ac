import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from txnsim import io
from txnsim.config import ExperimentConfig, SimConfig, parse_config
from txnsim.experiments import CellResult, PhasePoint
from txnsim.fitting import fit_power_law

EXP = ExperimentConfig(base=SimConfig(n_nodes=50, duration=100.0), capacities=(4, 6), densities=(0.2,),
                       replications=3)


def cells():
    out = []
    for d in (0.5, 0.2):
        for c, r0, r1, m0 in ((9, 12.5, 19.3, 0.48), (4, 0.5, 2.16, 0.92), (6, 3.42, 7.15, 0.675),
                              (12, 30.1, 40.2, 0.33)):
            out.append(CellResult(c, d, 0, 3, r0 * (1 + d), r1 * (1 + d), m0 * (1 - d / 4)))
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_number_format():
    assert io.fmt(1 / 3) == "0.333333"
    assert io.fmt(123456789.0) == "1.23457e+08"
    assert io.fmt(4.0) == "4"
    assert io.fmt(math.nan) == "nan" and io.fmt(None) == "nan"
    assert io.fmt(7) == "7"


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12))
def test_formatted_numbers_keep_six_significant_digits(x):
    assert float(io.fmt(x)) == pytest.approx(x, rel=5e-6, abs=1e-300)


def test_single_cell_table(tmp_path):
    paths = io.emit_results(tmp_path, EXP, cells=[CellResult(4, 0.2, 0, 3, 0.5, 2.0, 0.9)], fits=[])
    table = rows(paths["cells.csv"])
    assert table[0] == list(io.CELL_COLUMNS)
    assert table[1] == ["0.2", "4", "0", "3", "0.5", "2", "0.25", "0.9"]
    assert len(table) == 2


def test_headers_present_when_empty(tmp_path):
    paths = io.emit_results(tmp_path, EXP)
    assert rows(paths["cells.csv"]) == [list(io.CELL_COLUMNS)]
    assert rows(paths["boundary.csv"]) == [list(io.BOUNDARY_COLUMNS)]
    assert rows(paths["fits.csv"]) == [list(io.FIT_COLUMNS)]


def test_rows_sorted_by_density_capacity_rho(tmp_path):
    pts = [PhasePoint(0.9, 0.1, "dielectric", 4, 0.2), PhasePoint(0.1, 0.5, "resistive", 4, 0.2),
           PhasePoint(0.5, 0.5, "boundary", 4, 0.1)]
    paths = io.emit_results(tmp_path, EXP, cells=cells(), points=pts)
    keys = [(float(r[0]), float(r[1])) for r in rows(paths["cells.csv"])[1:]]
    assert keys == sorted(keys)
    b = [(float(r[0]), float(r[1]), float(r[2])) for r in rows(paths["boundary.csv"])[1:]]
    assert b == sorted(b)


def test_emission_is_byte_identical(tmp_path):
    a = io.emit_results(tmp_path / "a", EXP, cells=cells())
    b = io.emit_results(tmp_path / "b", EXP, cells=list(reversed(cells())))
    for name in ("cells.csv", "boundary.csv", "fits.csv", "manifest.txt"):
        assert a[name].read_bytes() == b[name].read_bytes()


def test_manifest_round_trips_config(tmp_path):
    paths = io.emit_results(tmp_path, EXP, wall_time=1.5)
    text = paths["manifest.txt"].read_text()
    cfg_lines = [line for line in text.splitlines()
                 if "=" in line and not line.startswith(("seed ", "version", "wall_time"))]
    assert parse_config(None, cfg_lines) == EXP
    assert "wall_time_s=1.500" in text
    assert sum(line.startswith("seed ") for line in text.splitlines()) == 2 * 3


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(io.OutputError):
        io.check_writable(blocker / "sub")


def test_tables_read_back(tmp_path):
    paths = io.emit_results(tmp_path, EXP, cells=cells())
    back = io.read_cells(paths["cells.csv"])
    assert len(back) == 8
    assert {(c.capacity, c.density) for c in back} == {(c.capacity, c.density) for c in cells()}
    fits = io.read_fits(paths["fits.csv"])
    fams = {(f.family, f.domain_tag) for f in fits}
    assert ("power_law", "r0 d=0.2") in fams and ("erf", "m0 d=0.5") in fams
    orig = fit_power_law([(c.capacity, c.r1) for c in cells() if c.density == 0.2])
    got = next(f for f in fits if f.domain_tag == "r1 d=0.2")
    assert got.beta == pytest.approx(orig.beta, rel=1e-5)


def test_plot_data_columns(tmp_path):
    paths = io.emit_results(tmp_path, EXP, cells=cells())
    out = io.plot_data(paths["cells.csv"], paths["fits.csv"], tmp_path / "plots")
    fig2 = out["fig2"].read_text()
    assert "# C r0_measured r0_fit r1_measured r1_fit" in fig2
    blocks = [b for b in fig2.split("\n\n\n") if b.strip()]
    curves = [b for b in blocks if "fitted curves" in b]
    assert len(curves) == 2
    for b in curves:
        data = [line for line in b.splitlines() if line and not line.startswith("#")]
        assert len(data) == io.CURVE_SAMPLES
    fig5 = out["fig5"].read_text()
    assert "# diagonal" in fig5
    diag = fig5.split("# diagonal")[1].split("\n")
    pts = np.array([list(map(float, line.split())) for line in diag if line and not line.startswith("#")])
    assert np.allclose(pts[:, 0] + pts[:, 1], 1.0, atol=1e-5)
    assert "m0_fit" in out["fig3"].read_text()


def test_missing_fit_family_is_named(tmp_path):
    paths = io.emit_results(tmp_path, EXP, cells=cells(), fits=[])
    with pytest.raises(io.MissingFitError, match="power_law"):
        io.plot_data(paths["cells.csv"], paths["fits.csv"], tmp_path, ("fig2",))


def test_empty_cells_give_empty_plot_files(tmp_path, caplog):
    paths = io.emit_results(tmp_path, EXP)
    out = io.plot_data(paths["cells.csv"], paths["fits.csv"], tmp_path)
    assert all(p.read_text() == "" for p in out.values())
    assert "empty" in caplog.text
