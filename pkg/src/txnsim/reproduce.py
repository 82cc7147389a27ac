"""Full-scale reproduction experiments (N=1600, S=84,600) behind the acceptance suite.

Each function measures one claim and returns a plain dict; results are
deterministic for a given master seed, and a :class:`Runner` with a cache
directory makes repeated evaluation cheap.
"""
from __future__ import annotations

import logging
import math

from .config import ExperimentConfig, SimConfig
from .experiments import Runner, boundary_points, find_m0, find_r0, find_r1, trace_boundary
from .fitting import equivalence_slope, fit_boundary, fit_power_law

log = logging.getLogger(__name__)

FULL_SCALE = SimConfig(n_nodes=1600, density=0.2, duration=84600.0)
# 3 replications per probe: the acceptance budget assumes 8 workers, we may have one
ACCEPTANCE = ExperimentConfig(base=FULL_SCALE, replications=3, bisection_tolerance=0.02)

AMPLIFICATION_CAPACITIES = (4, 6, 9, 12, 16, 20)
EQUIVALENCE_DENSITIES = (0.2, 0.5)
EQUIVALENCE_CAPACITIES = (4, 6, 9, 12)


def amplification(runner: Runner, exp: ExperimentConfig = ACCEPTANCE) -> dict:
    """r0(C), r1(C) at d=0.2, power-law exponents and the r1(12)/r1(7) ratio."""
    r0, r1 = {}, {}
    for c in AMPLIFICATION_CAPACITIES:
        r0[c] = find_r0(exp, c, 0.2, runner).value
        r1[c] = find_r1(exp, c, 0.2, runner, r0=r0[c]).value
        log.info("amplification C=%s r0=%.4g r1=%.4g", c, r0[c], r1[c])
    r0_7 = find_r0(exp, 7, 0.2, runner).value
    r1_7 = find_r1(exp, 7, 0.2, runner, r0=r0_7).value
    fit0 = fit_power_law([(c, r) for c, r in r0.items() if r > 0], "d=0.2")
    fit1 = fit_power_law(list(r1.items()), "d=0.2")
    return {"r0": r0, "r1": r1, "r1_7": r1_7, "fit_r0": fit0, "fit_r1": fit1,
            "beta0": fit0.beta, "beta1": fit1.beta, "ratio_12_7": r1[12] / r1_7}


def run_length(runner: Runner, exp: ExperimentConfig = ACCEPTANCE, capacity=6, density=0.2) -> dict:
    """r1 for run lengths S and 2S."""
    exp = exp.with_(bisection_tolerance=0.01)
    short = find_r1(exp, capacity, density, runner).value
    long_exp = exp.with_(base=exp.base.with_(duration=2 * exp.base.duration))
    long = find_r1(long_exp, capacity, density, runner).value
    return {"r1_S": short, "r1_2S": long, "rel_diff": abs(long - short) / short}


def equivalence(runner: Runner, exp: ExperimentConfig = ACCEPTANCE) -> dict:
    """(rho0, m0) for dense cells and the OLS slope of m0 on rho0."""
    cells = []
    for d in EQUIVALENCE_DENSITIES:
        for c in EQUIVALENCE_CAPACITIES:
            r0 = find_r0(exp, c, d, runner).value
            r1 = find_r1(exp, c, d, runner, r0=r0).value
            m0 = find_m0(exp, c, d, r0, runner).value
            cells.append({"d": d, "C": c, "r0": r0, "r1": r1, "rho0": r0 / r1, "m0": m0})
            log.info("equivalence C=%s d=%s rho0=%.4f m0=%.4f", c, d, r0 / r1, m0)
    slope = equivalence_slope([(x["rho0"], x["m0"]) for x in cells])
    return {"cells": cells, "slope": slope}


def boundary(runner: Runner, exp: ExperimentConfig = ACCEPTANCE, capacity=4, density=0.2) -> dict:
    """Traced (rho, m) boundary and its fit to m = 1 - A rho^beta."""
    r1 = find_r1(exp, capacity, density, runner).value
    points = trace_boundary(exp, capacity, density, r1, runner)
    bpts = boundary_points(points)
    fit = fit_boundary(bpts, f"C={capacity} d={density}")
    on_rho_axis = [(p.rho, p.m) for p in points if p.phase == "boundary" and p.angle == 0]
    on_m_axis = [(p.rho, p.m) for p in points if p.phase == "boundary" and p.angle == 90]
    return {"r1": r1, "points": points, "boundary": bpts, "fit": fit, "A": fit.A, "beta": fit.beta,
            "z1": on_rho_axis[0] if on_rho_axis else None,
            "z3": on_m_axis[0] if on_m_axis else None}


def dependent_transactions(runner: Runner, exp: ExperimentConfig = ACCEPTANCE, capacity=6, density=0.2) -> dict:
    """r1 with fully independent (p0=0) and fully dependent (p0=1) transactions."""
    exp = exp.with_(bisection_tolerance=0.005)
    out = {}
    for p0 in (0.0, 1.0):
        sub = exp.with_(base=exp.base.with_(cascade_prob=p0))
        out[p0] = find_r1(sub, capacity, density, runner).value
    return {"r1_p0_0": out[0.0], "r1_p0_1": out[1.0], "rel_increase": out[1.0] / out[0.0] - 1.0}


def sparse_ordering(runner: Runner, exp: ExperimentConfig = ACCEPTANCE, capacity=6) -> dict:
    """r0 in a sparse (d=0.011) versus a dense (d=0.2) network."""
    sparse = find_r0(exp, capacity, 0.011, runner).value
    dense = find_r0(exp, capacity, 0.2, runner).value
    return {"r0_sparse": sparse, "r0_dense": dense}


ALL = {
    "boundary": boundary,
    "dependent_transactions": dependent_transactions,
    "run_length": run_length,
    "sparse_ordering": sparse_ordering,
    "equivalence": equivalence,
    "amplification": amplification,
}
