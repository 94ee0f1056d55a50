"""Geo-tied replicated register: GPS-stamped last-writer-wins per key.

The coordinator of the key's home micro cloud stamps every write with its own
GPS clock, installs it, pushes copies to ``replication_factor - 1`` other
members and acknowledges once those pushes are settled. Reads are answered
by the coordinator alone from its highest-version record.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from ..macrocloud import DiscoveryResult, Macrocloud
from ..microcloud import CloudStatus, HandoffRecord, MicroCloudManager, MicroCloudState
from ..net import Network
from ..simcore import Engine, SimTime
from .history import NOT_FOUND, OK, READ, UNAVAILABLE, WRITE, HistoryEntry, OpHistory

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class GeoKey:
    home_region: str
    key: str

    def __post_init__(self):
        if not self.key:
            raise ValueError("key must be non-empty")

    def __str__(self) -> str:
        return f"{self.home_region}/{self.key}"


@dataclass(frozen=True, order=True)
class Version:
    gps_time: int
    writer: str

    def as_tuple(self) -> tuple[int, str]:
        return (self.gps_time, self.writer)


@dataclass(frozen=True)
class Record:
    geo_key: GeoKey
    value: str
    version: Version
    size_bytes: int = 0


def newer(a: Record | None, b: Record | None) -> Record | None:
    if a is None:
        return b
    if b is None:
        return a
    return b if b.version > a.version else a


@dataclass(frozen=True)
class Ack:
    version: Version


@dataclass(frozen=True)
class Unavailable:
    reason: str


@dataclass(frozen=True)
class ReadValue:
    value: str
    version: Version


@dataclass(frozen=True)
class ReadNotFound:
    forwarding_hint: str | None = None


@dataclass
class StorageParams:
    replication_factor: int = 3
    ttl_hops: int = 4
    op_timeout_us: int = 2_000_000
    max_attempts: int = 3
    retry_delay_us: int = 100_000

    def __post_init__(self):
        if self.replication_factor < 1:
            raise ValueError("replication_factor must be >= 1")


@dataclass
class StorageStats:
    writes_ok: int = 0
    writes_unavailable: int = 0
    storage_exhaustion_rejections: int = 0
    reads_ok: int = 0
    reads_not_found: int = 0
    reads_unavailable: int = 0
    chases: int = 0
    lost_updates: int = 0
    replica_pushes: int = 0
    write_latency_us: list[int] = field(default_factory=list)
    read_latency_us: list[int] = field(default_factory=list)


@dataclass
class _Op:
    client: str
    kind: str
    geo_key: GeoKey
    value: str | None
    size_bytes: int
    at: SimTime
    on_done: Callable | None = None
    invoke: SimTime = 0
    attempts: int = 0
    done: bool = False
    chased: bool = False
    region: str = ""


class StorageService:
    """Implements the micro-cloud storage hooks and the client-side protocol."""

    def __init__(self, engine: Engine, net: Network, clouds: MicroCloudManager, macro: Macrocloud,
                 params: StorageParams | None = None):
        self.engine = engine
        self.net = net
        self.clouds = clouds
        self.macro = macro
        self.params = params or StorageParams()
        self.replicas: dict[str, dict[GeoKey, Record]] = {}
        self.last_stamp: dict[str, int] = {}
        self.history = OpHistory()
        self.stats = StorageStats()
        self._queues: dict[str, deque[_Op]] = {}
        self._busy: set[str] = set()
        self._pending_push: set[tuple[str, GeoKey]] = set()
        clouds.store = self

    # -- pooled capacity -------------------------------------------------

    def replica_target(self, cloud: MicroCloudState) -> int:
        return min(self.params.replication_factor, len(cloud.members))

    def pool_bytes(self, cloud: MicroCloudState) -> int:
        return sum(self.net.tracks[v].storage_bytes for v in cloud.members)

    def used_bytes(self, cloud: MicroCloudState) -> int:
        r = self.replica_target(cloud)
        return sum(rec.size_bytes for rec in cloud.records.values()) * r

    # -- hooks called by the micro-cloud layer ---------------------------

    def carry_over(self, h: HandoffRecord, cloud: MicroCloudState) -> None:
        coord = cloud.coordinator
        own = self.replicas.pop(coord, {})
        for k, rec in own.items():
            cloud.records[k] = newer(cloud.records.get(k), rec)
        for k, rec in h.records.items():
            cloud.records[k] = newer(cloud.records.get(k), rec)
        self.maintain(cloud)

    def demote(self, cloud: MicroCloudState, old: str, records: dict) -> None:
        if old in cloud.members:
            self.replicas[old] = dict(records)

    def detach_member(self, cloud: MicroCloudState, vehicle: str) -> None:
        self.replicas.pop(vehicle, None)

    def recover(self, cloud: MicroCloudState, new_coordinator: str) -> dict:
        return dict(self.replicas.pop(new_coordinator, {}))

    def holders(self, cloud: MicroCloudState, k: GeoKey) -> list[str]:
        rec = cloud.records.get(k)
        if rec is None:
            return []
        out = [cloud.coordinator]
        for v in sorted(cloud.members):
            if v != cloud.coordinator:
                got = self.replicas.get(v, {}).get(k)
                if got is not None and got.version == rec.version:
                    out.append(v)
        return out

    def maintain(self, cloud: MicroCloudState) -> None:
        """Bring every record's replica count to min(replication_factor, members)."""
        if cloud.status is not CloudStatus.ACTIVE:
            return
        target = self.replica_target(cloud)
        for k in sorted(cloud.records):
            have = self.holders(cloud, k)
            if len(have) > target:
                for v in sorted(have[1:], reverse=True)[: len(have) - target]:
                    self.replicas[v].pop(k, None)
            elif len(have) < target:
                spare = [v for v in sorted(cloud.members)
                         if v not in have and (v, k) not in self._pending_push]
                for v in spare[: target - len(have)]:
                    self._push(cloud, cloud.records[k], v, lambda ok: None)

    def _push(self, cloud: MicroCloudState, rec: Record, member: str, settled: Callable[[bool], None]) -> None:
        coord = cloud.coordinator
        self.stats.replica_pushes += 1
        self._pending_push.add((member, rec.geo_key))
        msg = self.net.message(coord, member, "REPLICA", {"key": str(rec.geo_key)})

        def stored(m):
            self._pending_push.discard((member, rec.geo_key))
            if member in cloud.members and member != cloud.coordinator:
                store = self.replicas.setdefault(member, {})
                store[rec.geo_key] = newer(store.get(rec.geo_key), rec)
                ack = self.net.message(member, coord, "ACK", {"key": str(rec.geo_key)})
                self.net.reliable_unicast(ack, lambda a: settled(True), lambda a: settled(False))
            else:
                settled(False)

        def lost(m):
            self._pending_push.discard((member, rec.geo_key))
            settled(False)
        self.net.reliable_unicast(msg, stored, lost)

    # -- coordinator request handling -------------------------------------

    def _stamp(self, coord: str) -> int:
        stamp = max(self.engine.gps_now(coord), self.last_stamp.get(coord, -1) + 1)
        self.last_stamp[coord] = stamp
        return stamp

    def handle_write(self, cloud: MicroCloudState, op: _Op, reply: Callable) -> None:
        coord = cloud.coordinator
        rec = Record(op.geo_key, op.value, Version(self._stamp(coord), coord), op.size_bytes)
        old = cloud.records.get(op.geo_key)
        winner = newer(old, rec)
        r = max(1, self.replica_target(cloud))
        used = self.used_bytes(cloud) - (old.size_bytes * r if old is not None else 0)
        if winner is rec and used + rec.size_bytes * r > self.pool_bytes(cloud):
            self.stats.storage_exhaustion_rejections += 1
            reply(Unavailable("storage exhausted"))
            return
        if winner is not rec:
            self.stats.lost_updates += 1
        cloud.records[op.geo_key] = winner
        targets = [v for v in sorted(cloud.members) if v != coord][: self.replica_target(cloud) - 1]
        if not targets:
            reply(Ack(rec.version))
            return
        outstanding = {"n": len(targets)}

        def settled(ok):
            outstanding["n"] -= 1
            if outstanding["n"] == 0:
                reply(Ack(rec.version))
        for v in targets:
            self._push(cloud, winner, v, settled)

    def handle_read(self, cloud: MicroCloudState, op: _Op, reply: Callable) -> None:
        rec = cloud.records.get(op.geo_key)
        if rec is None:
            reply(ReadNotFound(cloud.forwarding_hints.get(op.geo_key)))
        else:
            reply(ReadValue(rec.value, rec.version))

    def _arrive(self, region_id: str, node: str, op: _Op, reply: Callable, fail: Callable) -> None:
        """A request reached ``node``: serve it, forward it to the coordinator, or defer it."""
        cloud = self.clouds.clouds[region_id]
        if cloud.status is not CloudStatus.ACTIVE:
            fail()
            return
        if cloud.transferring and (node == cloud.coordinator or node in cloud.members):
            cloud.deferred.append(lambda: self._arrive(region_id, node, op, reply, fail))
            return
        if node == cloud.coordinator:
            (self.handle_write if op.kind == WRITE else self.handle_read)(cloud, op, reply)
            return
        if node in cloud.members:
            coord = cloud.coordinator
            msg = self.net.message(node, coord, op.kind.upper())

            def relayed(m):
                self._arrive(region_id, coord, op,
                             lambda res: self.net.reliable_unicast(
                                 self.net.message(coord, node, "REPLY"), lambda mm: reply(res), lambda mm: fail()),
                             fail)
            self.net.reliable_unicast(msg, relayed, lambda m: fail())
            return
        fail()

    # -- client side -----------------------------------------------------

    def submit(self, client: str, kind: str, geo_key: GeoKey, value: str | None = None,
               size_bytes: int | None = None, at: SimTime | None = None,
               on_done: Callable | None = None) -> None:
        """Queue an operation; each client runs its operations one at a time."""
        if kind not in (READ, WRITE):
            raise ValueError(f"unknown op {kind!r}")
        if kind == WRITE and value is None:
            raise ValueError("write needs a value")
        at = self.engine.now if at is None else at
        size = size_bytes if size_bytes is not None else (len(value.encode()) if value else 0)
        op = _Op(client, kind, geo_key, value, size, at, on_done)
        self.engine.at(at, client, f"submit-{kind}", lambda ev: self._enqueue(op))

    def write(self, k: GeoKey, v: str, client: str, t: SimTime | None = None,
              size_bytes: int | None = None, on_done: Callable | None = None) -> None:
        self.submit(client, WRITE, k, v, size_bytes, t, on_done)

    def read(self, k: GeoKey, client: str, t: SimTime | None = None, on_done: Callable | None = None) -> None:
        self.submit(client, READ, k, None, None, t, on_done)

    def _enqueue(self, op: _Op) -> None:
        self._queues.setdefault(op.client, deque()).append(op)
        if op.client not in self._busy:
            self._next(op.client)

    def _next(self, client: str) -> None:
        q = self._queues.get(client)
        if not q:
            self._busy.discard(client)
            return
        op = q.popleft()
        self._busy.add(client)
        now = self.engine.now
        op.invoke = now
        if not self.net.is_present(client, now):
            self._complete(op, Unavailable("client absent"))
            return
        self.engine.at(now + self.params.op_timeout_us, client, "op-timeout",
                       lambda ev: self._complete(op, Unavailable("timeout")))
        self._attempt(op, op.geo_key.home_region)

    def _attempt(self, op: _Op, region_id: str) -> None:
        if op.done:
            return
        if not self.net.is_present(op.client, self.engine.now):
            self._complete(op, Unavailable("client absent"))
            return
        op.attempts += 1
        op.region = region_id
        req = self.macro.new_request(f"cloud:{region_id}", op.client, self.params.ttl_hops)
        self.macro.discover(req, lambda out: self._located(op, region_id, out), purpose="storage")

    def _retry(self, op: _Op, region_id: str, reason: str) -> None:
        if op.done:
            return
        if op.attempts >= self.params.max_attempts:
            self._complete(op, Unavailable(reason))
            return
        self.engine.after(self.params.retry_delay_us, op.client, "op-retry",
                          lambda ev: self._attempt(op, region_id))

    def _located(self, op: _Op, region_id: str, out) -> None:
        if op.done:
            return
        if not isinstance(out, DiscoveryResult):
            self._retry(op, region_id, "home cloud unreachable")
            return
        path = out.path

        def reply(result):
            # response travels back along the discovery path
            self.macro.send_along(tuple(reversed(path)), "REPLY", None,
                                  lambda end: self._answered(op, region_id, result),
                                  lambda: self._retry(op, region_id, "reply lost"))

        self.macro.send_along(path, op.kind.upper(), None,
                              lambda end: self._arrive(region_id, end, op, reply,
                                                       lambda: self._retry(op, region_id, "coordinator moved")),
                              lambda: self._retry(op, region_id, "request lost"))

    def _answered(self, op: _Op, region_id: str, result) -> None:
        if op.done:
            return
        if isinstance(result, ReadNotFound) and result.forwarding_hint and not op.chased:
            op.chased = True
            self.stats.chases += 1
            self._attempt(op, result.forwarding_hint)
            return
        self._complete(op, result)

    def _complete(self, op: _Op, result) -> None:
        if op.done:
            return
        op.done = True
        now = self.engine.now
        version = None
        if op.kind == WRITE:
            if isinstance(result, Ack):
                status, returned, version = OK, OK, result.version.as_tuple()
                self.stats.writes_ok += 1
                self.stats.write_latency_us.append(now - op.invoke)
            else:
                status, returned = UNAVAILABLE, UNAVAILABLE
                self.stats.writes_unavailable += 1
        else:
            if isinstance(result, ReadValue):
                status, returned, version = OK, result.value, result.version.as_tuple()
                self.stats.reads_ok += 1
                self.stats.read_latency_us.append(now - op.invoke)
            elif isinstance(result, ReadNotFound):
                status, returned = NOT_FOUND, None
                self.stats.reads_not_found += 1
                self.stats.read_latency_us.append(now - op.invoke)
            else:
                status, returned = UNAVAILABLE, None
                self.stats.reads_unavailable += 1
        respond = max(now, op.invoke + 1)
        self.history.append(HistoryEntry(op.client, op.kind, op.geo_key.key, op.value, op.invoke, respond,
                                         returned, status, version, op.geo_key.home_region))
        if op.on_done is not None:
            op.on_done(result)
        self.engine.at(respond, op.client, "client-next", lambda ev: self._next(op.client))

    # -- census ----------------------------------------------------------

    def census(self) -> dict:
        out = {}
        for rid, cloud in self.clouds.clouds.items():
            target = self.replica_target(cloud)
            counts = {str(k): len(self.holders(cloud, k)) for k in sorted(cloud.records)}
            out[rid] = {"status": cloud.status.value, "members": len(cloud.members), "target": target,
                        "keys": len(counts),
                        "at_target": sum(1 for c in counts.values() if c == target),
                        "replicas": counts}
        return out
