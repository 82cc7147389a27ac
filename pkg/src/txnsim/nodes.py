"""Per-node runtime state: load, overload shutdown, internal faults, no recovery."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .des import quantize


class Status(Enum):
    ALIVE = "alive"
    DISABLED_OVERLOAD = "overload"
    DISABLED_FAULT = "fault"


class Admission(Enum):
    ADMITTED = "admitted"
    OVERLOAD_SHUTDOWN = "overload"


class NodeStateError(RuntimeError):
    """Accounting or routing bug: the caller touched a node in an impossible state."""


@dataclass
class NodeState:
    node: int
    status: Status = Status.ALIVE
    # resident master-transaction ids in arrival order
    residents: list = field(default_factory=list)
    fault_time: float | None = None

    @property
    def load(self) -> int:
        return len(self.residents)

    @property
    def alive(self) -> bool:
        return self.status is Status.ALIVE


def admit_subtxn(state: NodeState, capacity: float, txn=None) -> Admission:
    """Admit one subtransaction; reaching ``capacity`` shuts the node down.

    On shutdown the node is left disabled and empty; the caller aborts the
    arriving subtransaction and every former resident.
    """
    if not state.alive:
        raise NodeStateError(f"admit on disabled node {state.node}")
    if state.load + 1 >= capacity:
        state.status = Status.DISABLED_OVERLOAD
        state.residents = []
        return Admission.OVERLOAD_SHUTDOWN
    state.residents.append(txn)
    return Admission.ADMITTED


def release_subtxn(state: NodeState, txn=None) -> NodeState:
    if not state.alive:
        raise NodeStateError(f"release on disabled node {state.node}")
    if state.load == 0:
        raise NodeStateError(f"load underflow on node {state.node}")
    if txn is None:
        state.residents.pop()
    else:
        state.residents.remove(txn)
    return state


def apply_fault(state: NodeState) -> list:
    """Disable an alive node; returns the residents that must be aborted."""
    if not state.alive:
        return []
    victims = state.residents
    state.status = Status.DISABLED_FAULT
    state.residents = []
    return victims


@dataclass(frozen=True)
class FaultPlan:
    """Internal-fault schedule for one run.

    ``mean_ttf`` draws one exponential delay per node (inf disables faults).
    ``fraction`` instead fails exactly ceil(fraction * N) randomly chosen nodes.
    Their delays are exponential with mean ``delay_mean`` if given; otherwise
    they follow the fault times of the equivalent ``mean_ttf`` run conditioned
    on failing within ``horizon``, i.e. an exponential with mean
    T_f = -horizon / ln(1 - m) truncated to [0, horizon).
    """
    mean_ttf: float = math.inf
    fraction: float | None = None
    delay_mean: float | None = None
    horizon: float = 1.0

    @property
    def enabled(self) -> bool:
        return self.fraction is not None or math.isfinite(self.mean_ttf)

    def draw(self, n_nodes: int, rng: np.random.Generator) -> list[tuple[float, int]]:
        """(time, node) pairs in scheduling order."""
        if self.fraction is not None:
            k = min(n_nodes, math.ceil(self.fraction * n_nodes - 1e-9))
            if k <= 0:
                return []
            victims = np.sort(rng.choice(n_nodes, size=k, replace=False))
            if self.delay_mean is not None:
                return [(quantize(rng.standard_exponential() * self.delay_mean), int(v)) for v in victims]
            return [(self._conditional_delay(rng.random(), k / n_nodes), int(v)) for v in victims]
        if not math.isfinite(self.mean_ttf):
            return []
        return [(quantize(rng.standard_exponential() * self.mean_ttf), v) for v in range(n_nodes)]

    def _conditional_delay(self, u: float, m: float) -> float:
        # inverse CDF of Exp(T_f) given t < horizon, with P(t < horizon) = m
        if m >= 1.0:
            return 0.0
        return quantize(self.horizon * math.log1p(-u * m) / math.log1p(-m))
