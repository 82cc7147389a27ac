"""Discrete-event kernel: virtual clock, (time, seq) event queue, labeled RNG streams.

Virtual time is measured in units of the subtransaction service time (tau0 = 1).
All random delays are snapped to a dyadic grid (``TIME_QUANTUM``) so that adding
integer service times never rounds; completions at ``start + 1.0`` are exact.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

TIME_QUANTUM_BITS = 32
TIME_QUANTUM = 2.0 ** -TIME_QUANTUM_BITS
# t + k stays exact on the grid while t < 2**(52 - TIME_QUANTUM_BITS)
MAX_TIME = 2.0 ** (52 - TIME_QUANTUM_BITS)

_SCALE = 2.0 ** TIME_QUANTUM_BITS


def quantize(x: float) -> float:
    """Snap a non-negative delay to the simulation time grid."""
    return math.floor(x * _SCALE + 0.5) / _SCALE


class EventKind(IntEnum):
    INJECT = 0
    SUBTXN_COMPLETE = 1
    NODE_FAULT = 2
    END_OF_RUN = 3


@dataclass(order=True, frozen=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: tuple = field(compare=False, default=())


class CausalityError(RuntimeError):
    """An event was scheduled in the virtual past."""


class EventQueue:
    """Priority queue of events ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0
        self.clock = 0.0
        self.scheduled = 0
        self.consumed = 0

    def schedule(self, time: float, kind: EventKind, payload: tuple = ()) -> Event:
        if time < self.clock:
            raise CausalityError(f"event at t={time} scheduled when clock={self.clock}")
        ev = Event(time, self._seq, kind, payload)
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._heap, ev)
        return ev

    def next_event(self) -> Event | None:
        """Pop the earliest event and advance the clock; None when empty."""
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.clock = ev.time
        self.consumed += 1
        return ev

    def __len__(self) -> int:
        return len(self._heap)

    def pending(self) -> list[Event]:
        return sorted(self._heap)


def _label_key(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def make_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` under a master ``seed``.

    The same (seed, label) pair always yields the same sequence; distinct labels
    spawn distinct SeedSequence entropy and hence independent substreams.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_label_key(label)])
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """Lazily created labeled substreams of one master seed."""

    LABELS = ("topology", "faults", "inject", "source", "length", "routing", "cascade")

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, label: str) -> np.random.Generator:
        gen = self._streams.get(label)
        if gen is None:
            gen = self._streams[label] = make_stream(self.seed, label)
        return gen

    def stream(self, label: str) -> np.random.Generator:
        """A fresh generator for ``label`` positioned at the start of its sequence."""
        return make_stream(self.seed, label)


def derive_seed(master: int, *key) -> int:
    """Hash a master seed and a cell/replication key into a 63-bit seed."""
    text = "|".join([str(int(master))] + [repr(k) for k in key])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little") >> 1
