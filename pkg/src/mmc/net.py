"""Unit-disk V2V radio over the event engine."""

from __future__ import annotations

import itertools
import math
import random
from bisect import bisect_right
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .mobility import VehicleTrack, position
from .simcore import Engine, SimTime

BROADCAST = "*"


class VehicleAbsentError(LookupError):
    pass


@dataclass(frozen=True)
class RadioModel:
    v2v_range_m: float = 300.0
    hop_latency_us: int = 2_000
    loss_prob: float = 0.0

    def __post_init__(self):
        if not self.v2v_range_m > 0:
            raise ValueError("v2v_range_m must be positive")
        if not self.hop_latency_us > 0:
            raise ValueError("hop_latency_us must be positive")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")


@dataclass
class Message:
    msg_id: int
    src: str
    dst: str
    kind: str
    body: Any = None
    ttl_hops: int = 0

    def __post_init__(self):
        if self.ttl_hops < 0:
            raise ValueError("ttl_hops must be >= 0")


@dataclass
class NetStats:
    sent: Counter = field(default_factory=Counter)
    delivered: Counter = field(default_factory=Counter)
    dropped_loss: Counter = field(default_factory=Counter)
    dropped_range: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {name: dict(sorted(getattr(self, name).items()))
                for name in ("sent", "delivered", "dropped_loss", "dropped_range")}


class Network:
    """Message passing between present vehicles.

    Connectivity is evaluated at the instant a transmission starts; the
    delivery event fires ``hop_latency_us`` later regardless of movement.
    """

    def __init__(self, engine: Engine, tracks: Iterable[VehicleTrack], radio: RadioModel,
                 rng: random.Random | None = None, snapshot_cache: int = 16):
        self.engine = engine
        self.radio = radio
        self.rng = rng or random.Random(0)
        self.tracks: dict[str, VehicleTrack] = {}
        for tr in tracks:
            if tr.vehicle_id in self.tracks:
                raise ValueError(f"duplicate vehicle id {tr.vehicle_id}")
            self.tracks[tr.vehicle_id] = tr
        self._by_start = sorted(self.tracks.values(), key=lambda tr: (tr.start, tr.vehicle_id))
        self._starts = [tr.start for tr in self._by_start]
        self._cache: OrderedDict[SimTime, tuple[dict, dict]] = OrderedDict()
        self._cache_size = snapshot_cache
        self._ids = itertools.count(1)
        self.stats = NetStats()

    def next_msg_id(self) -> int:
        return next(self._ids)

    def message(self, src: str, dst: str, kind: str, body: Any = None, ttl_hops: int = 0) -> Message:
        return Message(self.next_msg_id(), src, dst, kind, body, ttl_hops)

    # -- topology -------------------------------------------------------

    def _snapshot(self, t: SimTime) -> tuple[dict[str, tuple[float, float]], dict[str, list[str]]]:
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        hi = bisect_right(self._starts, t)
        pos = {}
        for tr in self._by_start[:hi]:
            if tr.end >= t:
                pos[tr.vehicle_id] = position(tr, t)
        ids = sorted(pos)
        adj: dict[str, list[str]] = {v: [] for v in ids}
        r2 = self.radio.v2v_range_m * self.radio.v2v_range_m
        for i, a in enumerate(ids):
            ax, ay = pos[a]
            for b in ids[i + 1:]:
                bx, by = pos[b]
                dx, dy = ax - bx, ay - by
                if dx * dx + dy * dy <= r2:
                    adj[a].append(b)
                    adj[b].append(a)
        snap = ({v: pos[v] for v in ids}, adj)
        self._cache[t] = snap
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return snap

    def present_ids(self, t: SimTime) -> list[str]:
        return list(self._snapshot(t)[0])

    def is_present(self, v: str, t: SimTime) -> bool:
        tr = self.tracks.get(v)
        return tr is not None and tr.present(t)

    def position(self, v: str, t: SimTime) -> tuple[float, float] | None:
        tr = self.tracks.get(v)
        return None if tr is None else position(tr, t)

    def neighbors(self, v: str, t: SimTime) -> set[str]:
        pos, adj = self._snapshot(t)
        if v not in pos:
            raise VehicleAbsentError(f"vehicle {v!r} absent at t={t}")
        return set(adj[v])

    def sorted_neighbors(self, v: str, t: SimTime) -> list[str]:
        pos, adj = self._snapshot(t)
        if v not in pos:
            raise VehicleAbsentError(f"vehicle {v!r} absent at t={t}")
        return adj[v]

    def in_range(self, a: str, b: str, t: SimTime) -> bool:
        pos, _ = self._snapshot(t)
        if a not in pos or b not in pos:
            return False
        (ax, ay), (bx, by) = pos[a], pos[b]
        return math.hypot(ax - bx, ay - by) <= self.radio.v2v_range_m

    def connected(self, a: str, b: str, t: SimTime, max_hops: int | None = None) -> int | None:
        """Shortest hop count between ``a`` and ``b`` at ``t``; None if unreachable within max_hops."""
        pos, adj = self._snapshot(t)
        if a not in pos or b not in pos:
            raise VehicleAbsentError(f"{a!r} or {b!r} absent at t={t}")
        if a == b:
            return 0
        dist = {a: 0}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            d = dist[u]
            if max_hops is not None and d >= max_hops:
                continue
            for w in adj[u]:
                if w not in dist:
                    if w == b:
                        return d + 1
                    dist[w] = d + 1
                    queue.append(w)
        return None

    # -- transmission ---------------------------------------------------

    def _lost(self) -> bool:
        p = self.radio.loss_prob
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.rng.random() < p

    def unicast(self, msg: Message, t: SimTime | None = None,
                on_deliver: Callable[[Message], None] | None = None) -> bool:
        """Single-hop send. Returns True when a delivery event was scheduled."""
        t = self.engine.now if t is None else t
        self.stats.sent[msg.kind] += 1
        if not self.in_range(msg.src, msg.dst, t):
            self.stats.dropped_range[msg.kind] += 1
            return False
        if self._lost():
            self.stats.dropped_loss[msg.kind] += 1
            return False
        self._deliver_at(t + self.radio.hop_latency_us, msg, on_deliver)
        return True

    def reliable_unicast(self, msg: Message, on_deliver: Callable[[Message], None],
                         on_fail: Callable[[Message], None] | None = None, attempts: int = 4) -> None:
        """Link-layer retransmission: retry lost frames up to ``attempts`` times.

        Each retry costs one hop latency. Range is re-checked on every attempt.
        """
        def attempt(k: int) -> None:
            if self.unicast(msg, self.engine.now, on_deliver):
                return
            if k + 1 >= attempts or not self.in_range(msg.src, msg.dst, self.engine.now):
                if on_fail is not None:
                    self.engine.after(self.radio.hop_latency_us, msg.src, f"{msg.kind}-fail",
                                      lambda ev: on_fail(msg))
                return
            self.engine.after(self.radio.hop_latency_us, msg.src, f"{msg.kind}-retry",
                              lambda ev: attempt(k + 1))
        attempt(0)

    def broadcast(self, msg: Message, t: SimTime | None = None,
                  on_deliver: Callable[[Message, str], None] | None = None) -> list[str]:
        """One transmission heard by every neighbour; loss is drawn per receiver."""
        t = self.engine.now if t is None else t
        self.stats.sent[msg.kind] += 1
        receivers = []
        for nb in self.sorted_neighbors(msg.src, t):
            if self._lost():
                self.stats.dropped_loss[msg.kind] += 1
                continue
            receivers.append(nb)
            self._deliver_at(t + self.radio.hop_latency_us, msg,
                             None if on_deliver is None else (lambda m, nb=nb: on_deliver(m, nb)),
                             target=nb)
        return receivers

    def _deliver_at(self, when: SimTime, msg: Message, cb, target: str | None = None) -> None:
        def fire(ev):
            self.stats.delivered[msg.kind] += 1
            if cb is not None:
                cb(msg)
        self.engine.at(when, target or msg.dst, f"{msg.kind}#{msg.msg_id}", fire)
