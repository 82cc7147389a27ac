"""Distributed-transaction lifecycle on top of the event kernel.

This is the reference engine: plain Python, heap-ordered events, optional event
trace and per-event conservation audits. :mod:`txnsim.fast` runs the same model
compiled; both consume the labeled random streams identically, so for equal
seeds they produce identical traces.

Model rules, in the order they are applied:

* Injections arrive with exponential gaps (mean 1/r, ``inject`` stream). The
  source is the k-th alive node in id order, k = floor(u * alive) (``source``).
  Length L = floor(mean + sd * z + 0.5), redrawn while L < 1 (``length``).
* The first subtransaction runs at the source. Every subtransaction occupies a
  node for exactly one time unit; the next hop starts the instant the previous
  one completes.
* Admission that would bring a node's load to C shuts the node down. The
  residents (arrival order) and then the arriving transaction abort.
* On completion: commit if all L hops are done; otherwise abort on timeout once
  the hop count reaches the TTL; otherwise route to the k-th alive out-neighbor
  in id order (``routing``), aborting if there is none.
* Two transactions cross paths when their service intervals overlap at a node;
  the encounter time is the later arrival. When a transaction aborts at time t,
  each distinct still-running partner with an encounter in (t - W, t] aborts with
  probability p0 (``cascade``, one draw per partner, partners in encounter order),
  breadth first.
* A node fault disables an alive node and aborts its residents. Disabled nodes
  never recover. The run stops at S or when the last node dies (choke).
"""
from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum

from .config import SimConfig
from .des import EventKind, EventQueue, RngStreams, quantize
from .nodes import Admission, FaultPlan, NodeState, Status, admit_subtxn, apply_fault, release_subtxn
from .topology import Network, generate_er


class Cause(Enum):
    NODE_DEATH = "node_death"
    NO_ALIVE_NEIGHBOR = "no_alive_neighbor"
    TIMEOUT = "timeout"
    CASCADE = "cascade"


CAUSES = tuple(Cause)


class TxnStatus(Enum):
    RUNNING = "running"
    COMMITTED = "committed"
    ABORTED = "aborted"


class Phase(Enum):
    SUPERCONDUCTIVE = "superconductive"
    RESISTIVE = "resistive"
    DIELECTRIC = "dielectric"


@dataclass
class MasterTxn:
    id: int
    length: int
    injected_at: float
    deadline: float
    completed: int = 0
    node: int = -1
    status: TxnStatus = TxnStatus.RUNNING
    cause: Cause | None = None
    in_service: bool = False

    @property
    def running(self) -> bool:
        return self.status is TxnStatus.RUNNING


class EncounterLog:
    """Crossed-path records (a, b, time) kept for a sliding window."""

    def __init__(self, window: float):
        self.window = window
        self.records: deque = deque()

    def purge(self, now: float):
        horizon = now - self.window
        while self.records and self.records[0][2] <= horizon:
            self.records.popleft()

    def add(self, a: int, b: int, time: float):
        self.purge(time)
        self.records.append((a, b, time))

    def partners(self, txn: int, now: float) -> list[int]:
        """Distinct partners of ``txn`` with encounters in (now - window, now]."""
        self.purge(now)
        seen = {}
        for a, b, _ in self.records:
            if a == txn:
                seen.setdefault(b, None)
            elif b == txn:
                seen.setdefault(a, None)
        return list(seen)


@dataclass
class RunMetrics:
    n_nodes: int
    duration: float
    abort_threshold: float = 1e-6
    injected: int = 0
    committed: int = 0
    aborted_node_death: int = 0
    aborted_no_alive_neighbor: int = 0
    aborted_timeout: int = 0
    aborted_cascade: int = 0
    in_flight_at_end: int = 0
    nodes_dead_overload: int = 0
    nodes_dead_fault: int = 0
    choke_time: float | None = None
    first_abort_time: float | None = None
    end_time: float = 0.0
    events: int = 0
    history_overflow: int = 0
    phase: Phase | None = None

    @property
    def aborted(self) -> int:
        return (self.aborted_node_death + self.aborted_no_alive_neighbor
                + self.aborted_timeout + self.aborted_cascade)

    @property
    def abort_fraction(self) -> float:
        return self.aborted / self.injected if self.injected else 0.0

    @property
    def fault_fraction(self) -> float:
        """m: fraction of nodes disabled by internal faults."""
        return self.nodes_dead_fault / self.n_nodes

    @property
    def dead_fraction(self) -> float:
        return (self.nodes_dead_fault + self.nodes_dead_overload) / self.n_nodes

    @property
    def threshold_resolvable(self) -> bool:
        """False when too few transactions ran for the threshold to exceed one abort."""
        return self.injected * self.abort_threshold >= 1.0

    def bump_abort(self, cause: Cause, now: float):
        name = "aborted_" + cause.value
        setattr(self, name, getattr(self, name) + 1)
        if self.first_abort_time is None:
            self.first_abort_time = now

    def conserved(self) -> bool:
        return self.injected == self.committed + self.aborted + self.in_flight_at_end

    def as_dict(self) -> dict:
        d = asdict(self)
        d["phase"] = self.phase.value if self.phase else None
        d["aborted"] = self.aborted
        d["fault_fraction"] = self.fault_fraction
        return d

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt_value(v)}\n" for k, v in self.as_dict().items())


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def classify_phase(metrics: RunMetrics, abort_threshold: float | None = None) -> Phase:
    threshold = metrics.abort_threshold if abort_threshold is None else abort_threshold
    if metrics.choke_time is not None and metrics.choke_time <= metrics.duration:
        return Phase.DIELECTRIC
    if metrics.injected == 0 or metrics.aborted / metrics.injected < threshold:
        return Phase.SUPERCONDUCTIVE
    return Phase.RESISTIVE


def draw_length(rng, mean: float, sd: float) -> int:
    while True:
        n = math.floor(mean + sd * rng.standard_normal() + 0.5)
        if n >= 1:
            return n


def fault_plan_for(cfg: SimConfig) -> FaultPlan:
    return FaultPlan(mean_ttf=cfg.mean_ttf, fraction=cfg.fault_fraction,
                     delay_mean=cfg.fault_delay_mean, horizon=cfg.duration)


def build_network(cfg: SimConfig, streams: RngStreams) -> Network:
    return generate_er(cfg.n_nodes, cfg.density, streams.stream("topology"))


class AuditError(AssertionError):
    pass


class Simulator:
    """One run of the transaction network model."""

    def __init__(self, cfg: SimConfig, network: Network | None = None, *,
                 trace: bool = False, audit: bool = False):
        self.cfg = cfg
        self.streams = RngStreams(cfg.seed)
        self.net = network if network is not None else build_network(cfg, self.streams)
        if self.net.n_nodes != cfg.n_nodes:
            raise ValueError("network size does not match n_nodes")
        self.queue = EventQueue()
        self.nodes = [NodeState(v) for v in range(cfg.n_nodes)]
        self.alive = list(range(cfg.n_nodes))
        self.txns: dict[int, MasterTxn] = {}
        self.running: dict[int, MasterTxn] = {}
        self.log = EncounterLog(cfg.dep_window)
        self.metrics = RunMetrics(cfg.n_nodes, cfg.duration, cfg.abort_threshold)
        self.trace_lines: list[str] | None = [] if trace else None
        self.audit = audit
        self._inject = self.streams["inject"]
        self._source = self.streams["source"]
        self._length = self.streams["length"]
        self._routing = self.streams["routing"]
        self._cascade = self.streams["cascade"]

    # -- tracing -------------------------------------------------------------
    def _emit(self, t, kind, txn=-1, node=-1, detail=""):
        if self.trace_lines is not None:
            self.trace_lines.append(f"{t!r},{kind},{txn},{node},{detail}")

    # -- setup ---------------------------------------------------------------
    def _schedule_initial(self):
        cfg, q = self.cfg, self.queue
        for time, node in fault_plan_for(cfg).draw(cfg.n_nodes, self.streams["faults"]):
            self.nodes[node].fault_time = time
            q.schedule(time, EventKind.NODE_FAULT, (node,))
        q.schedule(float(cfg.duration), EventKind.END_OF_RUN)
        if cfg.inject_rate > 0:
            q.schedule(quantize(self._inject.standard_exponential() / cfg.inject_rate), EventKind.INJECT)

    # -- main loop -----------------------------------------------------------
    def run(self) -> RunMetrics:
        self._schedule_initial()
        m = self.metrics
        handlers = {
            EventKind.INJECT: self._on_inject,
            EventKind.SUBTXN_COMPLETE: self._on_complete,
            EventKind.NODE_FAULT: self._on_fault,
        }
        while True:
            ev = self.queue.next_event()
            if ev is None:  # pragma: no cover - END_OF_RUN is always queued
                break
            m.events += 1
            if ev.kind is EventKind.END_OF_RUN:
                m.end_time = ev.time
                self._emit(ev.time, "end")
                break
            handlers[ev.kind](ev)
            if self.audit:
                self.check_invariants()
            if m.choke_time is not None:
                m.end_time = m.choke_time
                self._emit(m.choke_time, "choke")
                break
        m.in_flight_at_end = len(self.running)
        m.phase = classify_phase(m)
        return m

    def _on_inject(self, ev):
        t, cfg = ev.time, self.cfg
        if self.alive:
            k = math.floor(self._source.random() * len(self.alive))
            src = self.alive[k]
            length = draw_length(self._length, cfg.txn_len_mean, cfg.txn_len_sd)
            tid = self.metrics.injected
            self.metrics.injected += 1
            txn = MasterTxn(tid, length, t, t + cfg.ttl)
            self.txns[tid] = txn
            self.running[tid] = txn
            self._emit(t, "inject", tid, src, length)
            self._start_hop(txn, src, t)
            gap = quantize(self._inject.standard_exponential() / cfg.inject_rate)
            self.queue.schedule(t + gap, EventKind.INJECT)

    def _start_hop(self, txn: MasterTxn, node: int, t: float):
        state = self.nodes[node]
        residents = list(state.residents)
        if admit_subtxn(state, self.cfg.capacity, txn.id) is Admission.OVERLOAD_SHUTDOWN:
            self._kill_node(node, Status.DISABLED_OVERLOAD, t, residents + [txn.id])
            return
        if self.cfg.cascade_prob > 0:
            for other in residents:
                self.log.add(txn.id, other, t)
        txn.node = node
        txn.in_service = True
        self._emit(t, "hop", txn.id, node, txn.completed)
        self.queue.schedule(t + 1.0, EventKind.SUBTXN_COMPLETE, (txn.id, txn.completed))

    def _on_complete(self, ev):
        tid, hop = ev.payload
        txn = self.txns[tid]
        if not txn.running or txn.completed != hop:
            return  # stale: aborted while in service
        t, node = ev.time, txn.node
        release_subtxn(self.nodes[node], tid)
        txn.in_service = False
        txn.completed += 1
        self._emit(t, "complete", tid, node, txn.completed)
        if txn.completed == txn.length:
            txn.status = TxnStatus.COMMITTED
            del self.running[tid]
            self.metrics.committed += 1
            self._emit(t, "commit", tid, node)
            return
        if txn.completed >= self.cfg.ttl:
            self._abort_batch([tid], Cause.TIMEOUT, t)
            return
        alive_nbrs = [v for v in self.net.out_neighbors(node).tolist() if self.nodes[v].alive]
        if not alive_nbrs:
            self._abort_batch([tid], Cause.NO_ALIVE_NEIGHBOR, t)
            return
        nxt = alive_nbrs[math.floor(self._routing.random() * len(alive_nbrs))]
        self._start_hop(txn, nxt, t)

    def _on_fault(self, ev):
        node = ev.payload[0]
        state = self.nodes[node]
        if not state.alive:
            return
        residents = list(state.residents)
        self._kill_node(node, Status.DISABLED_FAULT, ev.time, residents, faulted=True)

    def _kill_node(self, node: int, status: Status, t: float, victims: list, faulted=False):
        state = self.nodes[node]
        if faulted:
            apply_fault(state)
            self.metrics.nodes_dead_fault += 1
        else:
            self.metrics.nodes_dead_overload += 1
        assert state.status is status and state.load == 0
        self.alive.pop(bisect.bisect_left(self.alive, node))
        self._emit(t, "death", -1, node, status.value)
        for tid in victims:
            self.txns[tid].in_service = False
            self.txns[tid].node = node
        self._abort_batch(victims, Cause.NODE_DEATH, t)
        if not self.alive:
            self.metrics.choke_time = t

    def _finalize_abort(self, txn: MasterTxn, cause: Cause, t: float):
        txn.status = TxnStatus.ABORTED
        txn.cause = cause
        del self.running[txn.id]
        if txn.in_service:
            release_subtxn(self.nodes[txn.node], txn.id)
            txn.in_service = False
        self.metrics.bump_abort(cause, t)
        self._emit(t, "abort", txn.id, txn.node, cause.value)

    def _abort_batch(self, victims: list, cause: Cause, t: float):
        """Abort ``victims`` and run the breadth-first cascade they trigger."""
        queue = []
        for tid in victims:
            txn = self.txns[tid]
            if txn.running:
                self._finalize_abort(txn, cause, t)
                queue.append(tid)
        p0 = self.cfg.cascade_prob
        if p0 <= 0:
            return
        i = 0
        while i < len(queue):
            for other in self.log.partners(queue[i], t):
                partner = self.txns[other]
                if partner.running and self._cascade.random() < p0:
                    self._finalize_abort(partner, Cause.CASCADE, t)
                    queue.append(other)
            i += 1

    # -- audits --------------------------------------------------------------
    def check_invariants(self):
        m = self.metrics
        if m.injected != m.committed + m.aborted + len(self.running):
            raise AuditError(f"conservation violated at t={self.queue.clock}")
        load = sum(s.load for s in self.nodes)
        if load != len(self.running):
            raise AuditError(f"sum of loads {load} != running {len(self.running)} at t={self.queue.clock}")
        for s in self.nodes:
            if s.alive and s.load >= self.cfg.capacity:
                raise AuditError(f"alive node {s.node} at load {s.load} >= C")
            if not s.alive and s.load:
                raise AuditError(f"disabled node {s.node} carries load")


def simulate(cfg: SimConfig, network: Network | None = None, *, trace=False, audit=False):
    """Run the reference engine; returns (metrics, trace lines or None)."""
    sim = Simulator(cfg, network, trace=trace, audit=audit)
    metrics = sim.run()
    return metrics, sim.trace_lines
