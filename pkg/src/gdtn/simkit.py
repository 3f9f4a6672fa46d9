"""
Deterministic discrete-event kernel.

Integer-nanosecond virtual clock, a heap ordered by (time, priority, seq),
cancellable handles, an append-only event log, and seeded randomness that is
derived per entity so adding one entity never shifts another's draws.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Iterator

import numpy as np

from .errors import EngineStopped

SimTime = int  # ns since simulation start

MS = 1_000_000
US = 1_000


class Priority(IntEnum):
    """Ordering class for events sharing a timestamp (lower runs first)."""

    CONTROL = 0
    NETWORK = 1
    TRAFFIC = 2


@dataclass
class Event:
    time: SimTime
    priority: int
    seq: int
    kind: str
    origin: str
    detail: dict[str, Any] = field(default_factory=dict)
    action: Callable[[Event], None] | None = None
    cancelled: bool = False

    def key(self):
        return (self.time, self.priority, self.seq)

    def __lt__(self, other):
        return self.key() < other.key()


class EventHandle:
    def __init__(self, event: Event):
        self._event = event

    @property
    def time(self) -> SimTime:
        return self._event.time

    @property
    def pending(self) -> bool:
        return not self._event.cancelled

    def cancel(self) -> None:
        self._event.cancelled = True


@dataclass(frozen=True)
class LogEntry:
    t_ns: int
    seq: int
    origin: str
    kind: str
    detail: dict[str, Any]

    def to_json(self) -> str:
        # fixed field order; detail keys sorted
        detail = json.dumps(self.detail, sort_keys=True, separators=(",", ":"))
        return (
            f'{{"t_ns":{self.t_ns},"seq":{self.seq},"origin":{json.dumps(self.origin)},'
            f'"kind":{json.dumps(self.kind)},"detail":{detail}}}'
        )


class EventLog:
    def __init__(self, entries: list[LogEntry] | None = None):
        self.entries: list[LogEntry] = entries if entries is not None else []

    def append(self, entry: LogEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, EventLog) and self.entries == other.entries

    def of_kind(self, kind: str) -> list[LogEntry]:
        return [e for e in self.entries if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> EventLog:
        out = []
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                out.append(LogEntry(d["t_ns"], d["seq"], d["origin"], d["kind"], d["detail"]))
        return cls(out)


def entity_key(entity_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(entity_id.encode("utf-8"), digest_size=8).digest(), "little")


def entity_rng(seed: int, entity_id: str) -> np.random.Generator:
    """Independent stream for ``entity_id`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, entity_key(entity_id)]))


class Engine:
    """Single-threaded event loop.

    >>> eng = Engine()
    >>> _ = eng.schedule(5, "tick", "clock")
    >>> [e.t_ns for e in eng.run(10)]
    [5]
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now: SimTime = 0
        self.log = EventLog()
        self._queue: list[Event] = []
        self._seq = 0
        self._stopped = False
        self._streams: dict[str, np.random.Generator] = {}

    def schedule(
        self,
        delay: int,
        kind: str,
        origin: str,
        action: Callable[[Event], None] | None = None,
        detail: dict[str, Any] | None = None,
        priority: int = Priority.CONTROL,
    ) -> EventHandle:
        if self._stopped:
            raise EngineStopped(kind)
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        ev = Event(self.now + int(delay), int(priority), self._seq, kind, origin, dict(detail or {}), action)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return EventHandle(ev)

    def schedule_at(self, time: SimTime, kind: str, origin: str, action=None, detail=None, priority=Priority.CONTROL):
        return self.schedule(time - self.now, kind, origin, action, detail, priority)

    def stop(self) -> None:
        self._stopped = True
        self._queue.clear()

    @property
    def stopped(self) -> bool:
        return self._stopped

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def stream(self, entity_id: str) -> np.random.Generator:
        rng = self._streams.get(entity_id)
        if rng is None:
            rng = self._streams[entity_id] = entity_rng(self.seed, entity_id)
        return rng

    def run(self, until: SimTime) -> EventLog:
        """Process every event with time <= ``until``; the clock stops at the last one."""
        while self._queue and self._queue[0].time <= until:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            self.log.append(LogEntry(ev.time, ev.seq, ev.origin, ev.kind, ev.detail))
            if ev.action is not None:
                ev.action(ev)
            if self._stopped:
                break
        return self.log


# -- counter-based streams ----------------------------------------------------
#
# Monte Carlo replications draw from a stateless hash of (seed, replication,
# lane, draw) so that any subset of replications can be evaluated anywhere, in
# any order, and reproduce the same values.

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x += _GOLDEN
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def replication_keys(seed: int, replications: np.ndarray) -> np.ndarray:
    """Per-replication key: hash(seed) XOR replication index."""
    base = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    return np.asarray(replications, dtype=np.uint64) ^ base


def counter_uniform(rep_keys: np.ndarray, lane: int, draw: int = 0) -> np.ndarray:
    """Uniforms in (0, 1), one per replication key, for the given lane/draw."""
    salt = _mix64(np.array([(lane << 20) ^ draw], dtype=np.uint64))[0]
    x = _mix64(_mix64(rep_keys ^ salt))
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
