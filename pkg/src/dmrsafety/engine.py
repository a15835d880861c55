"""Discrete-event scheduler on a virtual microsecond clock.

All simulated time is an integer count of microseconds since the start of the
run. Events with equal fire times dispatch in insertion order, so a run is a
pure function of its configuration and seeds.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

VirtualTime = int

US_PER_MS = 1_000
US_PER_S = 1_000_000


def ms(value: float) -> VirtualTime:
    """Convert milliseconds to integer microseconds (round half away from zero)."""
    scaled = value * US_PER_MS
    return int(scaled + 0.5) if scaled >= 0 else -int(-scaled + 0.5)


def to_ms(micros: VirtualTime) -> float:
    return micros / US_PER_MS


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current virtual time."""


@dataclass(order=True)
class Event:
    fire_at: VirtualTime
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)
    cancelled: bool = field(compare=False, default=False)


class EventHandle:
    __slots__ = ("_event",)

    def __init__(self, event: Event):
        self._event = event

    @property
    def fire_at(self) -> VirtualTime:
        return self._event.fire_at

    @property
    def pending(self) -> bool:
        return not self._event.cancelled

    def cancel(self) -> bool:
        """Cancel the event; returns False if it already fired or was cancelled."""
        if self._event.cancelled:
            return False
        self._event.cancelled = True
        return True


@dataclass(frozen=True)
class TraceEntry:
    time: VirtualTime
    handler: str
    summary: str

    def line(self) -> str:
        return f"{self.time} {self.handler} {self.summary}"


class SimulationTrace:
    """Ordered log of dispatches and annotations."""

    def __init__(self) -> None:
        self.entries: list[TraceEntry] = []

    def record(self, time: VirtualTime, handler: str, summary: str) -> None:
        self.entries.append(TraceEntry(time, handler, summary))

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def select(self, handler: Optional[str] = None, prefix: Optional[str] = None) -> list[TraceEntry]:
        return [
            e for e in self.entries
            if (handler is None or e.handler == handler)
            and (prefix is None or e.summary.startswith(prefix))
        ]

    def dumps(self) -> str:
        return "".join(e.line() + "\n" for e in self.entries)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "SimulationTrace":
        trace = cls()
        for raw in text.splitlines():
            if not raw:
                continue
            time, handler, *rest = raw.split(" ", 2)
            trace.record(int(time), handler, rest[0] if rest else "")
        return trace


Handler = Callable[[Any], Optional[str]]


class Engine:
    """Single-timeline event loop.

    Handlers are registered under a string id and receive the event payload.
    A handler may return a short summary string for the trace; ``None`` logs
    an empty summary.
    """

    def __init__(self, seed: int = 0, record_dispatches: bool = True):
        self.seed = seed
        self.now: VirtualTime = 0
        self.trace = SimulationTrace()
        self.record_dispatches = record_dispatches
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._handlers: dict[str, Handler] = {}
        self._streams: dict[str, Any] = {}
        self._stopped = False

    def register(self, handler_id: str, fn: Handler) -> None:
        if handler_id in self._handlers:
            raise ValueError(f"handler {handler_id!r} already registered")
        self._handlers[handler_id] = fn

    def schedule(self, fire_at: VirtualTime, target: str, payload: Any = None) -> EventHandle:
        if fire_at < self.now:
            raise SchedulingError(f"event for {target!r} at {fire_at} is before now={self.now}")
        if target not in self._handlers:
            raise KeyError(f"unknown handler {target!r}")
        event = Event(int(fire_at), next(self._seq), target, payload)
        heapq.heappush(self._queue, event)
        return EventHandle(event)

    def after(self, delay: VirtualTime, target: str, payload: Any = None) -> EventHandle:
        return self.schedule(self.now + delay, target, payload)

    def log(self, handler: str, summary: str) -> None:
        """Annotate the trace at the current instant without dispatching."""
        self.trace.record(self.now, handler, summary)

    def rng(self, stream_id: str):
        from .distributions import RngStream

        stream = self._streams.get(stream_id)
        if stream is None:
            stream = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return stream

    def stop(self) -> None:
        """Stop the current ``run_until`` after the in-flight dispatch."""
        self._stopped = True

    @property
    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def peek(self) -> Optional[VirtualTime]:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_at if self._queue else None

    def run_until(self, deadline: VirtualTime) -> SimulationTrace:
        """Dispatch every event with ``fire_at <= deadline`` and advance the clock.

        If :meth:`stop` is called from a handler, the clock stays at that
        handler's instant instead.
        """
        self._stopped = False
        queue = self._queue
        handlers = self._handlers
        record = self.trace.record if self.record_dispatches else None
        while queue and not self._stopped:
            event = queue[0]
            if event.fire_at > deadline:
                break
            heapq.heappop(queue)
            if event.cancelled:
                continue
            event.cancelled = True
            self.now = event.fire_at
            summary = handlers[event.target](event.payload)
            if record is not None:
                record(event.fire_at, event.target, summary or "")
        if not self._stopped and deadline > self.now:
            self.now = deadline
        return self.trace


class Channel:
    """Point-to-point FIFO link with fixed latency.

    ``capacity`` bounds the number of in-flight messages; when full, the
    ``reject`` policy drops the new message and ``drop-oldest`` cancels the
    oldest in-flight one.
    """

    def __init__(
        self,
        engine: Engine,
        name: str,
        deliver: Callable[[Any], Optional[str]],
        latency: VirtualTime,
        capacity: Optional[int] = None,
        drop_policy: str = "reject",
    ):
        if latency < 0:
            raise ValueError("channel latency must be >= 0")
        if capacity is not None and capacity < 1:
            raise ValueError("channel capacity must be >= 1")
        if drop_policy not in ("reject", "drop-oldest"):
            raise ValueError(f"unknown drop policy {drop_policy!r}")
        self.engine = engine
        self.name = name
        self.latency = latency
        self.capacity = capacity
        self.drop_policy = drop_policy
        self.dropped = 0
        self._deliver = deliver
        self._in_flight: list[EventHandle] = []
        engine.register(name, self._on_arrival)

    def send(self, message: Any) -> bool:
        self._in_flight = [h for h in self._in_flight if h.pending]
        if self.capacity is not None and len(self._in_flight) >= self.capacity:
            if self.drop_policy == "reject":
                self.dropped += 1
                return False
            self._in_flight.pop(0).cancel()
            self.dropped += 1
        sent_at = self.engine.now
        handle = self.engine.after(self.latency, self.name, (sent_at, message))
        self._in_flight.append(handle)
        return True

    def _on_arrival(self, payload) -> Optional[str]:
        _sent_at, message = payload
        return self._deliver(message)

