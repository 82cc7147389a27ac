"""Acceptance criteria, one test per criterion.

Criteria 4-8 and 10 run at full scale (N=1600, S=84,600). Their runs are cached
under results/cache; ``python scripts/run_acceptance.py`` fills the cache ahead
of time. A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import brute_force, complete_adjacency
from traceaudit import audit_trace
from txnsim import cli, reproduce
from txnsim.config import SimConfig
from txnsim.des import RngStreams
from txnsim.engine import build_network, simulate
from txnsim.experiments import Runner
from txnsim.fitting import (boundary_model, erf_model, fit_boundary, fit_erf, fit_power_law,
                            power_law)
from txnsim.topology import complete_digraph

CACHE = Path(__file__).resolve().parents[1] / "results" / "cache"


@pytest.fixture(scope="module")
def runner():
    with Runner(cache_dir=CACHE) as r:
        yield r


def within(x, lo, hi):
    return lo <= x <= hi


# 1 -------------------------------------------------------------------------

def test_criterion_01_determinism(tmp_path, record_property):
    args = ["--set", "n_nodes=200", "--set", "duration=3000", "--set", "inject_rate=4",
            "--set", "capacity=5", "--set", "cascade_prob=0.3", "--set", "mean_ttf=20000", "--seed", "42"]
    for backend in ("fast", "reference"):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{backend}{rep}"
            assert cli.main(["run-once", *args, "--backend", backend, "--trace", "--out", str(out)]) == 0
            outs.append(((out / "metrics.txt").read_bytes(), (out / "trace.csv").read_bytes()))
        assert outs[0] == outs[1]
        record_property(backend, f"{len(outs[0][1].splitlines())} trace lines identical")


# 2 -------------------------------------------------------------------------

def test_criterion_02_oracle_equivalence(record_property):
    lines = 0
    for seed in (0, 1, 2, 3, 4):
        cfg = SimConfig(n_nodes=5, density=1.0, capacity=3, inject_rate=0.1, duration=100.0, seed=seed)
        _, trace = simulate(cfg, complete_digraph(5), trace=True)
        ref = brute_force(5, complete_adjacency(5), capacity=3, rate=0.1, duration=100.0, seed=seed)
        assert trace == ref
        lines += len(trace)
    record_property("events", lines)


# 3 -------------------------------------------------------------------------

randomized = st.builds(
    SimConfig,
    n_nodes=st.integers(2, 200),
    capacity=st.integers(2, 10),
    density=st.sampled_from([0.01, 0.05, 0.2, 0.5, 1.0]),
    duration=st.sampled_from([50.0, 100.0, 200.0]),
    inject_rate=st.one_of(st.just(0.0), st.floats(1e-3, 1.0)),
    cascade_prob=st.sampled_from([0.0, 0.01, 0.5, 1.0]),
    mean_ttf=st.sampled_from([math.inf, 100.0, 1000.0]),
    seed=st.integers(0, 2 ** 40),
)


def test_criterion_03_conservation(record_property):
    checked = []

    @settings(max_examples=100, database=None)
    @given(randomized)
    def run(cfg):
        cfg = cfg.with_(inject_rate=cfg.inject_rate * cfg.n_nodes / 10)
        if cfg.edge_count < 1:
            cfg = cfg.with_(density=1.0)
        net = build_network(cfg, RngStreams(cfg.seed))
        # audit=True asserts conservation and load accounting after every event
        m, trace = simulate(cfg, net, trace=True, audit=True)
        counts, open_txns = audit_trace(trace, net, cfg.capacity, cfg.ttl)
        assert m.injected == m.committed + m.aborted + m.in_flight_at_end
        assert open_txns == m.in_flight_at_end and counts["inject"] == m.injected
        checked.append(m.events)

    run()
    record_property("configs", len(checked))
    record_property("events", sum(checked))
    assert len(checked) == 100


# 4 -------------------------------------------------------------------------

def test_criterion_04_amplification(runner, record_property):
    out = reproduce.amplification(runner)
    record_property("beta0", f"{out['beta0']:.3f} in [1.4, 2.0]")
    record_property("beta1", f"{out['beta1']:.3f} in [1.8, 2.4]")
    record_property("r1(12)/r1(7)", f"{out['ratio_12_7']:.3f} in [3, 5]")
    assert within(out["beta0"], 1.4, 2.0)
    assert within(out["beta1"], 1.8, 2.4)
    assert within(out["ratio_12_7"], 3.0, 5.0)


# 5 -------------------------------------------------------------------------

def test_criterion_05_run_length(runner, record_property):
    out = reproduce.run_length(runner)
    record_property("r1(S)", f"{out['r1_S']:.4g}")
    record_property("r1(2S)", f"{out['r1_2S']:.4g}")
    record_property("rel_diff", f"{out['rel_diff']:.4f} < 0.10")
    assert out["rel_diff"] < 0.10


# 6 -------------------------------------------------------------------------

def test_criterion_06_equivalence_slope(runner, record_property):
    out = reproduce.equivalence(runner)
    record_property("slope", f"{out['slope']:.3f} in [-1.25, -0.75]")
    assert within(out["slope"], -1.25, -0.75)


# 7 -------------------------------------------------------------------------

def test_criterion_07_boundary_fit(runner, record_property):
    out = reproduce.boundary(runner)
    (r1_, m1_), (r3_, m3_) = out["z1"], out["z3"]
    record_property("A", f"{out['A']:.3f} in [0.85, 1.1]")
    record_property("beta", f"{out['beta']:.3f} in [1.1, 1.5]")
    record_property("Z1", f"({r1_:.3f}, {m1_:.3f})")
    record_property("Z3", f"({r3_:.3f}, {m3_:.3f})")
    assert abs(r1_ - 1) <= 0.05 and m1_ <= 0.05
    assert r3_ <= 0.05 and abs(m3_ - 1) <= 0.05
    assert within(out["A"], 0.85, 1.1)
    assert within(out["beta"], 1.1, 1.5)


# 8 -------------------------------------------------------------------------

def test_criterion_08_dependent_transactions(runner, record_property):
    out = reproduce.dependent_transactions(runner)
    record_property("r1(p0=0)", f"{out['r1_p0_0']:.4g}")
    record_property("r1(p0=1)", f"{out['r1_p0_1']:.4g}")
    record_property("increase", f"{100 * out['rel_increase']:.2f}% in (0, 10]%")
    assert out["r1_p0_1"] > out["r1_p0_0"]
    assert out["rel_increase"] <= 0.10


# 9 -------------------------------------------------------------------------

def test_criterion_09_fitter_self_tests(record_property):
    cs = np.arange(3, 23, dtype=float)
    pl = fit_power_law(zip(cs[:10], power_law(cs[:10], 2.0, 1.5)))
    ef = fit_erf(zip(cs, erf_model(cs, 0.2, 0.5, 1.0)))
    rho = np.linspace(0.05, 1.0, 10)
    bf = fit_boundary(zip(rho, boundary_model(rho, 1.0, 1.2)))
    for f, truth in ((pl, (2.0, 1.5)), (ef, (0.2, 0.5, 1.0)), (bf, (1.0, 1.2))):
        got = (f.A, f.alpha, f.beta) if f.family == "erf" else (f.A, f.beta)
        assert f.rmse < 1e-9
        assert np.allclose(got, truth, rtol=1e-6, atol=1e-6)

    rng = np.random.default_rng(2024)
    c = np.array([4, 6, 9, 12, 16, 20], dtype=float)
    betas = [fit_power_law(zip(c, power_law(c, 0.7, 1.7) * (1 + 0.05 * rng.standard_normal(6)))).beta
             for _ in range(100)]
    worst_pl = float(np.max(np.abs(np.array(betas) - 1.7)))
    truth = np.array([0.2, 0.5, 1.0])
    worst_erf = 0.0
    for _ in range(100):
        m = np.clip(erf_model(cs, *truth) * (1 + 0.02 * rng.standard_normal(cs.size)), 1e-9, 1.0)
        f = fit_erf(zip(cs, m))
        worst_erf = max(worst_erf, float(np.max(np.abs(np.array([f.A, f.alpha, f.beta]) / truth - 1))))
    record_property("power-law worst |dbeta|", f"{worst_pl:.3f} <= 0.1")
    record_property("erf worst rel err", f"{worst_erf:.3f} <= 0.15")
    assert worst_pl <= 0.1 and worst_erf <= 0.15


# 10 ------------------------------------------------------------------------

def test_criterion_10_sparse_ordering(runner, record_property):
    out = reproduce.sparse_ordering(runner)
    record_property("r0(d=0.011)", f"{out['r0_sparse']:.4g}")
    record_property("r0(d=0.2)", f"{out['r0_dense']:.4g}")
    assert out["r0_sparse"] > out["r0_dense"]
