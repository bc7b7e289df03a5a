"""Deterministic discrete-event core.

Time is an integer number of milliseconds. Events that fire at the same
instant dispatch in insertion order, so a (seed, config) pair always yields
the same trace.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

# event kinds recognised in traces
BLOCK_TICK = "block-tick"
RPC_DEQUEUE = "rpc-dequeue"
RELAYER_STEP = "relayer-step"
WORKLOAD_SUBMIT = "workload-submit"
NETWORK_ARRIVAL = "network-arrival"


class SimulationError(RuntimeError):
    """Raised on scheduler misuse (a logic bug, never a protocol outcome)."""


@dataclass(order=True)
class SimEvent:
    fire_at: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], Any] | None = field(compare=False, default=None)
    payload: Any = field(compare=False, default=None)
    cancelled: bool = field(compare=False, default=False)


@dataclass(frozen=True)
class TraceRecord:
    fire_at_ms: int
    seq: int
    kind: str
    digest: str

    def to_line(self) -> str:
        return f"{self.fire_at_ms}\t{self.seq}\t{self.kind}\t{self.digest}"


def payload_digest(payload: Any) -> str:
    return hashlib.blake2b(repr(payload).encode(), digest_size=8).hexdigest()


class Engine:
    """Virtual clock, ordered event queue and seeded RNG.

    ``schedule`` returns a ticket (the event's sequence number) that can be
    passed to ``cancel``.
    """

    def __init__(self, seed: int = 0, record_trace: bool = True) -> None:
        if not 0 <= seed < 2**64:
            raise SimulationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.now = 0
        self.rng = random.Random(seed)
        self._queue: list[SimEvent] = []
        self._counter = itertools.count()
        self._live: dict[int, SimEvent] = {}
        self.record_trace = record_trace
        self.trace: list[TraceRecord] = []
        self._hasher = hashlib.sha256()
        self.dispatched = 0

    def schedule(self, fire_at: int, kind: str, action: Callable[[], Any] | None = None,
                 payload: Any = None) -> int:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SimulationError(f"cannot schedule {kind} at {fire_at} < now={self.now}")
        ev = SimEvent(fire_at, next(self._counter), kind, action, payload)
        heapq.heappush(self._queue, ev)
        self._live[ev.seq] = ev
        return ev.seq

    def after(self, delay: int, kind: str, action: Callable[[], Any] | None = None,
              payload: Any = None) -> int:
        return self.schedule(self.now + max(0, int(delay)), kind, action, payload)

    def cancel(self, ticket: int) -> bool:
        ev = self._live.pop(ticket, None)
        if ev is None:
            return False
        ev.cancelled = True
        return True

    def pending(self) -> int:
        return len(self._live)

    def peek_time(self) -> int | None:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_at if self._queue else None

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; returns the count."""
        count = 0
        queue = self._queue
        while queue:
            ev = queue[0]
            if ev.cancelled:
                heapq.heappop(queue)
                continue
            if ev.fire_at > t_end:
                break
            heapq.heappop(queue)
            del self._live[ev.seq]
            self.now = ev.fire_at
            self._record(ev)
            count += 1
            if ev.action is not None:
                ev.action()
        self.now = max(self.now, t_end)
        self.dispatched += count
        return count

    def run(self, stop: Callable[[], bool] | None = None, t_max: int | None = None) -> int:
        """Run until the queue drains, ``stop()`` turns true, or ``t_max`` passes."""
        count = 0
        queue = self._queue
        while queue:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            if t_max is not None and ev.fire_at > t_max:
                heapq.heappush(queue, ev)
                break
            del self._live[ev.seq]
            self.now = ev.fire_at
            self._record(ev)
            count += 1
            if ev.action is not None:
                ev.action()
            if stop is not None and stop():
                break
        self.dispatched += count
        return count

    def _record(self, ev: SimEvent) -> None:
        digest = payload_digest(ev.payload) if ev.payload is not None else "-"
        line = f"{ev.fire_at}\t{ev.seq}\t{ev.kind}\t{digest}\n"
        self._hasher.update(line.encode())
        if self.record_trace:
            self.trace.append(TraceRecord(ev.fire_at, ev.seq, ev.kind, digest))

    def trace_hash(self) -> str:
        return self._hasher.hexdigest()

    def iter_trace_lines(self) -> Iterator[str]:
        for rec in self.trace:
            yield rec.to_line()

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.iter_trace_lines():
                fh.write(line + "\n")
