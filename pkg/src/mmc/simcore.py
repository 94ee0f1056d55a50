"""Deterministic discrete-event engine and the per-vehicle GPS clock model.

All times are integer microseconds since scenario start. Nothing in the engine
touches floating point, so a replay with the same seed is bit-identical.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

SimTime = int

US_PER_MS = 1_000
US_PER_S = 1_000_000


def seconds(s: float) -> SimTime:
    """Convert seconds to integer microseconds (round half to even)."""
    return int(round(s * US_PER_S))


def to_seconds(t: SimTime) -> float:
    return t / US_PER_S


class PastEventError(ValueError):
    """Raised when an event is scheduled before the current engine time."""


class UnknownVehicleError(KeyError):
    pass


@dataclass(order=True)
class Event:
    fire_at: SimTime
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)
    action: Callable[["Event"], None] | None = field(compare=False, default=None, repr=False)

    def log_entry(self) -> tuple[int, int, str, str]:
        return (self.fire_at, self.seq, self.target, str(self.payload))


EventLog = list[Event]


@dataclass
class ClockModel:
    """Fixed per-vehicle GPS offsets bounded by ``epsilon`` microseconds."""

    epsilon: int = 0
    per_vehicle_offset: dict[str, int] = field(default_factory=dict)

    @classmethod
    def draw(cls, vehicle_ids: Iterable[str], epsilon: int, rng: random.Random) -> "ClockModel":
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        offsets = {v: rng.randint(-epsilon, epsilon) for v in sorted(set(vehicle_ids))}
        return cls(epsilon, offsets)

    def offset(self, vehicle_id: str) -> int:
        try:
            return self.per_vehicle_offset[vehicle_id]
        except KeyError:
            raise UnknownVehicleError(vehicle_id) from None

    def gps_time(self, vehicle_id: str, now: SimTime) -> SimTime:
        return max(0, now + self.offset(vehicle_id))


class Engine:
    """Single-threaded event loop with a deterministic (fire_at, seq) order.

    Events may carry an ``action`` callable; it is invoked with the event when
    the event is delivered. Set ``keep_log=False`` for long runs where only
    counts matter.
    """

    def __init__(self, clock: ClockModel | None = None, keep_log: bool = True):
        self.now: SimTime = 0
        self.clock = clock or ClockModel()
        self.keep_log = keep_log
        self.log: EventLog = []
        self.scheduled = 0
        self.delivered = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise PastEventError(f"past event: fire_at={event.fire_at} < now={self.now}")
        event.seq = next(self._seq)
        heapq.heappush(self._queue, event)
        self.scheduled += 1
        return event

    def at(self, fire_at: SimTime, target: str, payload: Any = None,
           action: Callable[[Event], None] | None = None) -> Event:
        return self.schedule(Event(fire_at, -1, target, payload, action))

    def after(self, delay: SimTime, target: str, payload: Any = None,
              action: Callable[[Event], None] | None = None) -> Event:
        return self.at(self.now + delay, target, payload, action)

    def pending(self) -> int:
        return len(self._queue)

    def peek(self) -> SimTime | None:
        return self._queue[0].fire_at if self._queue else None

    def step(self) -> Event:
        ev = heapq.heappop(self._queue)
        self.now = ev.fire_at
        self.delivered += 1
        if self.keep_log:
            self.log.append(ev)
        if ev.action is not None:
            ev.action(ev)
        return ev

    def run_until(self, t: SimTime) -> EventLog:
        if t < self.now:
            raise PastEventError(f"run_until({t}) is before now={self.now}")
        delivered: EventLog = []
        while self._queue and self._queue[0].fire_at <= t:
            delivered.append(self.step())
        self.now = t
        return delivered

    def run_while(self, predicate: Callable[[], bool], limit: SimTime) -> None:
        """Deliver events while ``predicate()`` holds and the next event is <= limit."""
        while predicate() and self._queue and self._queue[0].fire_at <= limit:
            self.step()

    def gps_now(self, vehicle_id: str) -> SimTime:
        return self.clock.gps_time(vehicle_id, self.now)
