"""Drivers that locate critical rates, critical fault fractions and phase boundaries.

Every probe is a set of constant-parameter runs, one per replication, decided by
majority vote. Replication i of a (C, d) cell always uses the same seed, so
successive probes of a bisection see common random numbers.
"""
from __future__ import annotations

import ast
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import MIN_RATE, ExperimentConfig, SimConfig
from .des import derive_seed
from .engine import Phase, RunMetrics

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    pass


# -- running and caching ----------------------------------------------------

def _strip_docstrings(tree):
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if (isinstance(body, list) and body and isinstance(body[0], ast.Expr)
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str)):
            node.body = body[1:] or [ast.Pass()]
    return tree


@functools.lru_cache(maxsize=None)
def _source_digest() -> str:
    """Digest of the simulator sources, insensitive to comments and docstrings."""
    here = Path(__file__).parent
    h = hashlib.sha256()
    for name in ("des.py", "topology.py", "nodes.py", "engine.py", "fast.py"):
        tree = _strip_docstrings(ast.parse((here / name).read_text()))
        h.update(ast.dump(tree).encode())
    return h.hexdigest()[:16]


def config_key(cfg: SimConfig) -> str:
    text = repr(sorted((k, repr(v)) for k, v in cfg.__dict__.items()))
    return hashlib.sha256((text + _source_digest()).encode()).hexdigest()[:24]


def _metrics_from_dict(d: dict) -> RunMetrics:
    d = dict(d)
    phase = d.pop("phase")
    d.pop("aborted", None)
    d.pop("fault_fraction", None)
    m = RunMetrics(**d)
    m.phase = Phase(phase) if phase else None
    return m


def _run_one(cfg: SimConfig, backend: str) -> RunMetrics:
    if backend == "fast":
        from .fast import simulate_fast
        return simulate_fast(cfg)[0]
    from .engine import simulate
    return simulate(cfg)[0]


class Runner:
    """Executes runs with an optional on-disk result cache and worker pool.

    The cache key covers the full run config and a digest of the simulator
    sources, so cached results are only reused for identical code and inputs.
    """

    def __init__(self, workers: int = 1, cache_dir=None, backend: str = "fast"):
        self.workers = workers
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._pool = ProcessPoolExecutor(workers) if workers > 1 else None
        self.runs = 0
        self.cache_hits = 0

    def close(self):
        if self._pool:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _cached(self, cfg):
        if not self.cache_dir:
            return None
        path = self.cache_dir / f"{config_key(cfg)}.json"
        if path.exists():
            self.cache_hits += 1
            return _metrics_from_dict(json.loads(path.read_text()))
        return None

    def _store(self, cfg, m: RunMetrics):
        self.runs += 1
        if self.cache_dir:
            path = self.cache_dir / f"{config_key(cfg)}.json"
            path.write_text(json.dumps(m.as_dict()))

    def run(self, cfg: SimConfig) -> RunMetrics:
        m = self._cached(cfg)
        if m is None:
            m = _run_one(cfg, self.backend)
            self._store(cfg, m)
        return m

    def run_many(self, cfgs) -> list[RunMetrics]:
        cfgs = list(cfgs)
        out = [self._cached(c) for c in cfgs]
        todo = [i for i, m in enumerate(out) if m is None]
        if self._pool and len(todo) > 1:
            results = self._pool.map(_run_one, [cfgs[i] for i in todo], [self.backend] * len(todo))
        else:
            results = (_run_one(cfgs[i], self.backend) for i in todo)
        for i, m in zip(todo, results):
            self._store(cfgs[i], m)
            out[i] = m
        return out


# -- probes -----------------------------------------------------------------

@dataclass
class Probe:
    """Majority decision over replications for one parameter point."""
    cfg: SimConfig
    runs: list
    hit: bool  # majority satisfied the predicate being searched for

    @property
    def phases(self) -> list[Phase]:
        return [m.phase for m in self.runs]

    def mean(self, attr) -> float:
        return sum(getattr(m, attr) for m in self.runs) / len(self.runs)


def replication_seeds(exp: ExperimentConfig, capacity, density) -> list[int]:
    return [derive_seed(exp.seed, "cell", float(capacity), float(density), i)
            for i in range(exp.replications)]


def probe(runner: Runner, base: SimConfig, seeds, predicate) -> Probe:
    """Run replications until a strict majority agrees on ``predicate``."""
    need = len(seeds) // 2 + 1
    runs, yes, no = [], 0, 0
    if runner.workers > 1:
        runs = runner.run_many(base.with_(seed=s) for s in seeds)
        yes = sum(bool(predicate(m)) for m in runs)
        return Probe(base, runs, yes >= need)
    for s in seeds:
        m = runner.run(base.with_(seed=s))
        runs.append(m)
        if predicate(m):
            yes += 1
        else:
            no += 1
        if yes >= need or no >= need:
            break
    return Probe(base, runs, yes >= need)


def _superconductive(m: RunMetrics) -> bool:
    return m.phase is Phase.SUPERCONDUCTIVE


def _dielectric(m: RunMetrics) -> bool:
    return m.phase is Phase.DIELECTRIC


# -- critical rates ---------------------------------------------------------

@dataclass
class RateResult:
    """Bisection outcome: ``value`` is the largest rate that passed."""
    value: float
    lo: float
    hi: float
    probes: list = field(default_factory=list)
    flag: str = ""

    @property
    def rel_width(self) -> float:
        return (self.hi - self.lo) / self.hi if self.hi > 0 else 0.0


def guess_r0(capacity, n_nodes) -> float:
    """Starting point for the r0 bracket (rough fit to pilot runs at d=0.2)."""
    c = max(float(capacity) - 2.0, 0.25)
    return 0.3 * c ** 2.7 * n_nodes / 1600.0


def guess_r1(capacity, n_nodes) -> float:
    c = max(float(capacity) - 2.0, 0.25)
    return 2.3 * c ** 2.1 * n_nodes / 1600.0


def bisect_rate(runner, base, seeds, passes, lo, guess, tol, floor_ratio=2.0 ** -20,
                step=1.5) -> RateResult:
    """Largest rate r >= lo such that ``passes`` (majority) holds, to relative ``tol``.

    ``lo`` must be known to pass (0 passes trivially). The upper end of the
    bracket is found by stepping up from ``guess`` by ``step``; if ``guess``
    fails, it steps down towards ``lo`` (or to ``guess * floor_ratio`` when lo = 0).
    """
    probes = []

    def test(r):
        p = probe(runner, base.with_(inject_rate=r), seeds, passes)
        probes.append((r, p))
        log.debug("probe r=%.6g pass=%s phases=%s", r, p.hit, [ph.value for ph in p.phases])
        return p.hit

    hi = None
    r = max(guess, lo * step)
    floor = max(guess * floor_ratio, MIN_RATE)
    if test(r):
        lo = r
        while True:
            r *= step
            if test(r):
                lo = r
            else:
                hi = r
                break
    else:
        hi = r
        while True:
            r = r / step
            if r <= lo or (lo == 0 and r < floor):
                break
            if test(r):
                lo = r
                break
            hi = r
    flag = ""
    if lo == 0 and hi <= floor * step:
        return RateResult(0.0, 0.0, hi, probes, flag="no passing rate above floor")
    while (hi - lo) / hi > tol:
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 2
        if test(mid):
            lo = mid
        else:
            hi = mid
    return RateResult(lo, lo, hi, probes, flag)


def cell_config(exp: ExperimentConfig, capacity, density, **changes) -> SimConfig:
    return exp.base.with_(capacity=capacity, density=density, mean_ttf=math.inf,
                          fault_fraction=None, **changes)


def find_r0(exp: ExperimentConfig, capacity, density, runner: Runner) -> RateResult:
    """Maximum abort-free (superconductive) injection rate."""
    base = cell_config(exp, capacity, density)
    seeds = replication_seeds(exp, capacity, density)
    return bisect_rate(runner, base, seeds, _superconductive, 0.0,
                       guess_r0(capacity, base.n_nodes), exp.bisection_tolerance)


def find_r1(exp: ExperimentConfig, capacity, density, runner: Runner, r0: float | None = None) -> RateResult:
    """Maximum choke-free injection rate; bracketed from r0 upward so r1 >= r0."""
    base = cell_config(exp, capacity, density)
    seeds = replication_seeds(exp, capacity, density)
    lo = r0 or 0.0
    guess = max(guess_r1(capacity, base.n_nodes), 1.25 * lo)
    return bisect_rate(runner, base, seeds, lambda m: not _dielectric(m), lo, guess,
                       exp.bisection_tolerance)


# -- critical fault fraction ------------------------------------------------

@dataclass
class M0Result:
    value: float
    ttf_lo: float  # largest mean time-to-failure seen to choke
    ttf_hi: float  # smallest mean time-to-failure seen not to choke
    probes: list = field(default_factory=list)
    flag: str = ""


def find_m0(exp: ExperimentConfig, capacity, density, r0: float, runner: Runner) -> M0Result:
    """Smallest measured fault fraction m that chokes the network at rate r0.

    Bisects (geometrically) over the mean time-to-failure T_f; m is read off the
    choking runs at the boundary probe as the fraction of fault-disabled nodes.
    """
    base = cell_config(exp, capacity, density, inject_rate=r0)
    seeds = replication_seeds(exp, capacity, density)
    S = base.duration
    probes = []

    def test(ttf):
        p = probe(runner, base.with_(mean_ttf=ttf), seeds, _dielectric)
        probes.append((ttf, p))
        log.debug("m0 probe T_f=%.6g choke=%s m=%.4f", ttf, p.hit, p.mean("fault_fraction"))
        return p

    hi = 8.0 * S
    p = test(hi)
    while p.hit:
        hi *= 4
        if hi > 1e4 * S:
            raise ExperimentError(f"network chokes at r0={r0} without faults (C={capacity}, d={density})")
        p = test(hi)
    lo = S / 4
    p_lo = test(lo)
    while not p_lo.hit:
        lo /= 4
        if lo < S * 1e-4:
            raise ExperimentError("network does not choke even with all nodes faulted")
        p_lo = test(lo)
    while hi / lo - 1 > exp.bisection_tolerance:
        mid = math.sqrt(lo * hi)
        p = test(mid)
        if p.hit:
            lo, p_lo = mid, p
        else:
            hi = mid
    choking = [m for m in p_lo.runs if _dielectric(m)]
    m0 = sum(m.fault_fraction for m in choking) / len(choking)
    return M0Result(m0, lo, hi, probes)


# -- phase boundary in the (rho, m) square ----------------------------------

@dataclass
class PhasePoint:
    rho: float
    m: float
    phase: str  # superconductive/resistive/dielectric, or "boundary"/"censored"
    capacity: float
    density: float
    seed: int = 0
    angle: float = 0.0


def trace_boundary(exp: ExperimentConfig, capacity, density, r1: float, runner: Runner,
                   overshoot: float = 0.1) -> list[PhasePoint]:
    """Bisect along rays from the origin for the resistive -> dielectric flip.

    The fault coordinate is set directly (``fault_fraction``). Rays leaving the
    square through rho = 1 are searched up to rho = 1 + ``overshoot`` because
    r1 itself is choke-free by definition; the emitted boundary point is
    clipped into the unit square.
    """
    base = cell_config(exp, capacity, density)
    seeds = replication_seeds(exp, capacity, density)
    points = []
    for angle in exp.ray_angles:
        th = math.radians(angle)
        cos_t, sin_t = math.cos(th), math.sin(th)
        if angle == 90:
            cos_t = 0.0
        if angle == 0:
            sin_t = 0.0
        s_max = 1.0 / max(cos_t, sin_t)
        if sin_t < cos_t:
            s_max *= 1.0 + overshoot

        def test(s):
            rho, m = s * cos_t, min(1.0, s * sin_t)
            cfg = base.with_(inject_rate=rho * r1, fault_fraction=m)
            p = probe(runner, cfg, seeds, _dielectric)
            votes = {ph.value: 0 for ph in p.phases}
            for ph in p.phases:
                votes[ph.value] += 1
            label = Phase.DIELECTRIC.value if p.hit else max(
                (v for v in votes if v != Phase.DIELECTRIC.value), key=votes.get,
                default=Phase.RESISTIVE.value)
            points.append(PhasePoint(rho, m, label, capacity, density, seeds[0], angle))
            return p.hit

        if not test(s_max):
            points.append(PhasePoint(min(1.0, s_max * cos_t), min(1.0, s_max * sin_t), "censored",
                                     capacity, density, seeds[0], angle))
            continue
        lo, hi = 0.0, s_max
        while (hi - lo) / hi > exp.bisection_tolerance:
            mid = (lo + hi) / 2
            if test(mid):
                hi = mid
            else:
                lo = mid
        s = (lo + hi) / 2
        points.append(PhasePoint(min(1.0, s * cos_t), min(1.0, s * sin_t), "boundary",
                                 capacity, density, seeds[0], angle))
    return points


def boundary_points(points) -> list[tuple[float, float]]:
    return [(p.rho, p.m) for p in points if p.phase == "boundary"]


# -- sweeps -----------------------------------------------------------------

@dataclass
class CellResult:
    capacity: float
    density: float
    seed_base: int
    replications: int
    r0: float = math.nan
    r1: float = math.nan
    m0: float = math.nan
    r1_by_p0: dict = field(default_factory=dict)
    error: str = ""
    flags: list = field(default_factory=list)

    @property
    def rho0(self) -> float:
        if not self.r1 or math.isnan(self.r1):
            return math.nan
        return self.r0 / self.r1


def run_cell(exp: ExperimentConfig, capacity, density, runner: Runner, *, with_m0=True) -> CellResult:
    cell = CellResult(capacity, density, exp.seed, exp.replications)
    try:
        r0 = find_r0(exp, capacity, density, runner)
        cell.r0 = r0.value
        if r0.flag:
            cell.flags.append("r0: " + r0.flag)
        r1 = find_r1(exp, capacity, density, runner, r0=r0.value)
        cell.r1 = r1.value
        if cell.r0 > cell.r1:
            raise ExperimentError(f"r0={cell.r0} exceeds r1={cell.r1}")
        if with_m0 and cell.r0 > 0:
            cell.m0 = find_m0(exp, capacity, density, cell.r0, runner).value
        for p0 in exp.p0_values:
            sub = exp.with_(base=exp.base.with_(cascade_prob=p0))
            cell.r1_by_p0[p0] = find_r1(sub, capacity, density, runner, r0=0.0).value
        if exp.base.duration * cell.r0 * exp.base.abort_threshold < 1:
            cell.flags.append("threshold read as zero aborts")
    except Exception as exc:  # a failing cell must not stop the sweep
        log.exception("cell C=%s d=%s failed", capacity, density)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def sweep(exp: ExperimentConfig, runner: Runner, *, with_m0=True) -> list[CellResult]:
    cells = []
    for d in exp.densities:
        for c in exp.capacities:
            log.info("cell C=%s d=%s", c, d)
            cells.append(run_cell(exp, c, d, runner, with_m0=with_m0))
    return sorted(cells, key=lambda c: (c.density, c.capacity))
