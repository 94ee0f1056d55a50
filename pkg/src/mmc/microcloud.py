"""Geo-tied micro clouds: membership, coordinator election and hand-off.

A micro cloud belongs to a fixed circular region. Vehicles inside the region
join it; the coordinator holds the membership table and the primary copy of
the cloud's state. When the coordinator is about to leave, the state moves to
another member (type "a"), else to the nearest reachable active neighbour
cloud (type "b"), else it is dropped and counted as data loss (type "c").
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable

from .mobility import Region
from .net import Network
from .simcore import Engine, SimTime, seconds

if TYPE_CHECKING:
    from .macrocloud import Macrocloud

log = logging.getLogger(__name__)


class CloudStatus(str, enum.Enum):
    ACTIVE = "active"
    VACANT = "vacant"


@dataclass(frozen=True)
class MembershipParams:
    heartbeat_period_s: float = 1.0
    timeout_multiplier: int = 3
    handoff_neighbor_search_hops: int = 3
    lookahead_s: float = 2.0
    membership_floor: int = 1

    def __post_init__(self):
        if not self.heartbeat_period_s > 0:
            raise ValueError("heartbeat_period_s must be positive")
        if self.timeout_multiplier < 2:
            raise ValueError("timeout_multiplier must be >= 2")
        if self.handoff_neighbor_search_hops < 0 or self.lookahead_s < 0 or self.membership_floor < 1:
            raise ValueError("invalid hand-off parameters")

    @property
    def period_us(self) -> SimTime:
        return seconds(self.heartbeat_period_s)

    @property
    def timeout_us(self) -> SimTime:
        return self.period_us * self.timeout_multiplier

    @property
    def lookahead_us(self) -> SimTime:
        return seconds(self.lookahead_s)


@dataclass
class MicroCloudState:
    region: Region
    members: dict[str, SimTime] = field(default_factory=dict)
    coordinator: str | None = None
    records: dict[str, Any] = field(default_factory=dict)
    services: set[str] = field(default_factory=set)
    status: CloudStatus = CloudStatus.VACANT
    forwarding_hints: dict[str, str] = field(default_factory=dict)
    transferring: bool = False
    deferred: list[Callable[[], None]] = field(default_factory=list)
    coordinator_seen: SimTime = 0
    active_since: SimTime | None = None

    @property
    def region_id(self) -> str:
        return self.region.region_id

    def check(self) -> None:
        if self.status is CloudStatus.ACTIVE:
            assert self.coordinator in self.members, "coordinator must be a member"
        else:
            assert not self.members and self.coordinator is None, "vacant cloud has members"


@dataclass
class HandoffRecord:
    region_id: str
    t: SimTime
    from_vehicle: str
    kind: str = "pending"  # a | b | c
    to_vehicle: str | None = None
    to_region: str | None = None
    records: dict[str, Any] = field(default_factory=dict)
    trigger: str = "exit"
    status: str = "in_flight"  # in_flight | done
    dropped: int = 0
    completed_at: SimTime | None = None


class EmptyMembershipError(ValueError):
    pass


def elect_coordinator(members: Iterable[str]) -> str:
    members = list(members)
    if not members:
        raise EmptyMembershipError("cannot elect a coordinator from an empty member set")
    return min(members)


class NullStore:
    """Storage hooks used when no storage service is attached."""

    def carry_over(self, h: HandoffRecord, cloud: MicroCloudState) -> None:
        for k, rec in h.records.items():
            cloud.records[k] = rec

    def detach_member(self, cloud: MicroCloudState, vehicle: str) -> None:
        pass

    def recover(self, cloud: MicroCloudState, new_coordinator: str) -> dict[str, Any]:
        return {}

    def maintain(self, cloud: MicroCloudState) -> None:
        pass

    def demote(self, cloud: MicroCloudState, old: str, records: dict[str, Any]) -> None:
        pass


@dataclass
class CloudMetrics:
    handoffs: dict[str, int] = field(default_factory=lambda: {"a": 0, "b": 0, "c": 0})
    data_loss_records: int = 0
    data_loss_events: int = 0
    vacancies: list[dict] = field(default_factory=list)
    joins: int = 0
    leaves: int = 0
    evictions: int = 0
    coordinator_failures: int = 0
    census_mismatches: int = 0
    repopulated_with_remote_records: int = 0
    membership_timeline: list[tuple[SimTime, str, int]] = field(default_factory=list)


class MicroCloudManager:
    """Runs every region's membership protocol from one periodic tick.

    Each tick first lets every present vehicle act (join, heartbeat, leave),
    then lets every active cloud's coordinator act (evict, hand off,
    maintain replicas). Messages sent during the tick arrive one hop latency
    later, so evictions always look at the previous tick's heartbeats.
    """

    def __init__(self, engine: Engine, net: Network, regions: Iterable[Region],
                 params: MembershipParams | None = None, participant: Callable[[str], bool] | None = None,
                 record_timeline: bool = False):
        self.engine = engine
        self.net = net
        self.params = params or MembershipParams()
        regions = list(regions)
        ids = [r.region_id for r in regions]
        if len(set(ids)) != len(ids):
            raise ValueError("region ids must be unique")
        self.regions = {r.region_id: r for r in sorted(regions, key=lambda r: r.region_id)}
        self.clouds = {rid: MicroCloudState(r) for rid, r in self.regions.items()}
        self.participant = participant or (lambda v: self.net.tracks[v].storage_bytes > 0)
        self.store: Any = NullStore()
        self.macro: Macrocloud | None = None
        self.metrics = CloudMetrics()
        self.handoff_log: list[HandoffRecord] = []
        self.record_timeline = record_timeline
        self.tick_hooks: list[Callable[[SimTime], None]] = []
        self._started = False
        self._stop_at: SimTime | None = None
        self.lost_records_by_region: dict[str, int] = {}

    # -- queries ---------------------------------------------------------

    def cloud(self, region_id: str) -> MicroCloudState:
        return self.clouds[region_id]

    def region_for(self, x: float, y: float) -> Region | None:
        """Region containing (x, y); nearest centre wins, ties to the lower id."""
        best = None
        for r in self.regions.values():
            if r.contains(x, y):
                key = (r.distance_to_center(x, y), r.region_id)
                if best is None or key < best[0]:
                    best = (key, r)
        return None if best is None else best[1]

    def region_of_vehicle(self, v: str, t: SimTime) -> Region | None:
        p = self.net.position(v, t)
        return None if p is None else self.region_for(*p)

    def cloud_of_member(self, v: str) -> MicroCloudState | None:
        for c in self.clouds.values():
            if v in c.members:
                return c
        return None

    def cloud_coordinated_by(self, v: str) -> MicroCloudState | None:
        for c in self.clouds.values():
            if c.coordinator == v and c.status is CloudStatus.ACTIVE:
                return c
        return None

    def inside(self, v: str, region: Region, t: SimTime) -> bool:
        p = self.net.position(v, t)
        return p is not None and region.contains(*p)

    def staying(self, v: str, region: Region, t: SimTime) -> bool:
        """Inside now and (with predictive hand-off enabled) still inside after the lookahead."""
        if not self.inside(v, region, t):
            return False
        la = self.params.lookahead_us
        return la == 0 or self.inside(v, region, t + la)

    # -- lifecycle -------------------------------------------------------

    def start(self, stop_at: SimTime | None = None) -> None:
        if self._started:
            return
        self._started = True
        self._stop_at = stop_at
        self.engine.at(self.engine.now, "clouds", "tick", self._tick)

    def _tick(self, ev) -> None:
        t = self.engine.now
        self.vehicle_phase(t)
        for rid in self.regions:
            self.heartbeat_tick(rid, t)
        for hook in self.tick_hooks:
            hook(t)
        nxt = t + self.params.period_us
        if self._stop_at is None or nxt <= self._stop_at:
            self.engine.at(nxt, "clouds", "tick", self._tick)

    # -- vehicle side ----------------------------------------------------

    def vehicle_phase(self, t: SimTime) -> None:
        for v in self.net.present_ids(t):
            if not self.participant(v):
                continue
            here = self.region_of_vehicle(v, t)
            current = self.cloud_of_member(v)
            if current is not None and (here is None or here.region_id != current.region_id):
                self._leave(v, current, t)
                current = None
            if here is None:
                continue
            cloud = self.clouds[here.region_id]
            if current is None:
                self.on_enter(v, here, t)
            elif cloud.coordinator != v:
                self._heartbeat(v, cloud, t)

    def on_enter(self, v: str, region: Region, t: SimTime) -> None:
        cloud = self.clouds[region.region_id]
        if v in cloud.members:
            return
        if cloud.status is CloudStatus.VACANT:
            if not self.staying(v, region, t):
                return
            self._activate(cloud, v, t)
            return
        msg = self.net.message(v, "*", "JOIN", {"region": region.region_id})

        def on_join(m, receiver):
            if receiver == cloud.coordinator and cloud.status is CloudStatus.ACTIVE:
                self._admit(cloud, m.src, self.engine.now)
        self.net.broadcast(msg, t, on_join)

    def _activate(self, cloud: MicroCloudState, v: str, t: SimTime) -> None:
        cloud.status = CloudStatus.ACTIVE
        cloud.coordinator = v
        cloud.members = {v: t}
        cloud.coordinator_seen = t
        cloud.active_since = t
        self.metrics.joins += 1
        if self.lost_records_by_region.get(cloud.region_id) and cloud.forwarding_hints:
            self.metrics.repopulated_with_remote_records += 1
        self._timeline(cloud, t)

    def _admit(self, cloud: MicroCloudState, v: str, t: SimTime) -> None:
        if v not in cloud.members:
            if not self.inside(v, cloud.region, t):
                return
            self.metrics.joins += 1
        cloud.members[v] = t
        self._timeline(cloud, t)

    def _heartbeat(self, v: str, cloud: MicroCloudState, t: SimTime) -> None:
        coord = cloud.coordinator
        msg = self.net.message(v, coord, "HEARTBEAT", {"region": cloud.region_id})

        def on_hb(m):
            if cloud.status is CloudStatus.ACTIVE and cloud.coordinator == m.dst:
                self._admit(cloud, m.src, self.engine.now)
        self.net.unicast(msg, t, on_hb)

    def _leave(self, v: str, cloud: MicroCloudState, t: SimTime) -> None:
        if v == cloud.coordinator:
            # coordinators leave through the hand-off path in heartbeat_tick
            return
        msg = self.net.message(v, cloud.coordinator, "LEAVE", {"region": cloud.region_id})

        def on_leave(m):
            if m.src in cloud.members and m.src != cloud.coordinator:
                self._remove_member(cloud, m.src, self.engine.now)
                self.metrics.leaves += 1
        if not self.net.unicast(msg, t, on_leave):
            pass  # the coordinator will time the member out

    def _remove_member(self, cloud: MicroCloudState, v: str, t: SimTime) -> None:
        cloud.members.pop(v, None)
        self.store.detach_member(cloud, v)
        self._timeline(cloud, t)

    def _timeline(self, cloud: MicroCloudState, t: SimTime) -> None:
        if self.record_timeline:
            self.metrics.membership_timeline.append((t, cloud.region_id, len(cloud.members)))

    # -- coordinator side ------------------------------------------------

    def heartbeat_tick(self, region_id: str, t: SimTime) -> None:
        cloud = self.clouds[region_id]
        if cloud.status is not CloudStatus.ACTIVE or cloud.transferring:
            return
        p = self.params
        coord = cloud.coordinator
        if not self.net.is_present(coord, t):
            if t - cloud.coordinator_seen > p.timeout_us:
                self._coordinator_failed(cloud, t)
            return
        cloud.coordinator_seen = t
        cloud.members[coord] = t
        for v, last in sorted(cloud.members.items()):
            if v != coord and t - last > p.timeout_us:
                self._remove_member(cloud, v, t)
                self.metrics.evictions += 1
        if not self.staying(coord, cloud.region, t):
            self.initiate_handoff(region_id, t, trigger="exit")
            return
        if p.membership_floor > 1:
            remaining = [v for v in cloud.members if self.staying(v, cloud.region, t)]
            if len(remaining) < p.membership_floor:
                self.initiate_handoff(region_id, t, trigger="floor")
                return
        self.store.maintain(cloud)

    def _coordinator_failed(self, cloud: MicroCloudState, t: SimTime) -> None:
        """Members time the silent coordinator out and elect a successor.

        The successor rebuilds the primary copy from its own replicas; records
        it never held are lost.
        """
        self.metrics.coordinator_failures += 1
        old = cloud.coordinator
        cloud.members.pop(old, None)
        self.store.detach_member(cloud, old)
        alive = [v for v in cloud.members if self.net.is_present(v, t) and self.inside(v, cloud.region, t)]
        held = dict(cloud.records)
        if not alive:
            self._vacate(cloud, t, held, cause="coordinator-failure")
            return
        new = elect_coordinator(alive)
        cloud.coordinator = new
        cloud.coordinator_seen = t
        recovered = self.store.recover(cloud, new)
        lost = [k for k in held if k not in recovered]
        cloud.records = recovered
        if lost:
            self._count_loss(cloud, len(lost))

    def _count_loss(self, cloud: MicroCloudState, n: int) -> None:
        self.metrics.data_loss_records += n
        self.metrics.data_loss_events += 1
        self.lost_records_by_region[cloud.region_id] = self.lost_records_by_region.get(cloud.region_id, 0) + n

    def _vacate(self, cloud: MicroCloudState, t: SimTime, held: dict, cause: str) -> None:
        self.metrics.vacancies.append({"t_us": t, "region": cloud.region_id,
                                       "records_held": len(held), "cause": cause})
        for v in list(cloud.members):
            self.store.detach_member(cloud, v)
        cloud.members = {}
        cloud.coordinator = None
        cloud.status = CloudStatus.VACANT
        cloud.records = {}
        cloud.active_since = None
        self._timeline(cloud, t)

    def initiate_handoff(self, region_id: str, t: SimTime, trigger: str = "exit",
                         exclude: frozenset[str] = frozenset()) -> HandoffRecord:
        cloud = self.clouds[region_id]
        old = cloud.coordinator
        h = HandoffRecord(region_id, t, old, records=dict(cloud.records), trigger=trigger)
        self.handoff_log.append(h)
        candidates = [v for v in cloud.members
                      if v != old and v not in exclude and self.net.is_present(v, t)
                      and self.staying(v, cloud.region, t)]
        if trigger == "floor":
            candidates = []
        if candidates:
            self._handoff_to_member(cloud, h, elect_coordinator(candidates), exclude)
        else:
            self._handoff_to_neighbor(cloud, h)
        return h

    def _handoff_to_member(self, cloud: MicroCloudState, h: HandoffRecord, new: str,
                           exclude: frozenset[str]) -> None:
        h.kind = "a"
        h.to_vehicle = new
        h.to_region = cloud.region_id
        cloud.transferring = True
        old = h.from_vehicle
        msg = self.net.message(old, new, "HANDOFF", {"region": cloud.region_id, "n": len(h.records)})

        def delivered(m):
            now = self.engine.now
            cloud.transferring = False
            if cloud.status is not CloudStatus.ACTIVE or new not in cloud.members:
                # receiver left in the meantime; retry from the old coordinator
                self.initiate_handoff(cloud.region_id, now, h.trigger, exclude | {new})
                return
            self.metrics.handoffs["a"] += 1
            cloud.coordinator = new
            cloud.coordinator_seen = now
            cloud.records = {}
            self.store.carry_over(h, cloud)
            self.store.demote(cloud, old, h.records)
            self._census(h, cloud)
            h.status = "done"
            h.completed_at = now
            self._flush_deferred(cloud)

        def failed(m):
            cloud.transferring = False
            self.initiate_handoff(cloud.region_id, self.engine.now, h.trigger, exclude | {new})
        self.net.reliable_unicast(msg, delivered, failed)

    def _handoff_to_neighbor(self, cloud: MicroCloudState, h: HandoffRecord) -> None:
        t = h.t
        old = h.from_vehicle
        held = dict(cloud.records)
        self._vacate(cloud, t, held, cause=f"handoff-{h.trigger}")
        self._flush_deferred(cloud)
        hops = self.params.handoff_neighbor_search_hops
        if self.macro is None or hops == 0 or not held:
            self._drop(cloud, h)
            return

        def match(u, when):
            c = self.cloud_coordinated_by(u)
            if c is None or c.region_id == cloud.region_id or c.transferring:
                return None
            return c.region_id

        def found(res):
            from .macrocloud import DiscoveryResult
            if not isinstance(res, DiscoveryResult):
                self._drop(cloud, h)
                return
            h.to_region = res.provider
            self.macro.send_along(res.path, "HANDOFF", {"region": cloud.region_id},
                                  lambda end: self._deliver_to_neighbor(cloud, h, end),
                                  lambda: self._drop(cloud, h))
        req = self.macro.new_request("mmc.handoff", old, hops)
        self.macro.discover(req, found, match=match, purpose="handoff")

    def _deliver_to_neighbor(self, origin: MicroCloudState, h: HandoffRecord, end: str) -> None:
        target = self.clouds[h.to_region]
        now = self.engine.now
        if target.status is not CloudStatus.ACTIVE or (end != target.coordinator and end not in target.members):
            self._drop(origin, h)
            return
        h.kind = "b"
        h.to_vehicle = target.coordinator
        self.metrics.handoffs["b"] += 1
        self.store.carry_over(h, target)
        for k in h.records:
            origin.forwarding_hints[k] = target.region_id
        self._census(h, target)
        h.status = "done"
        h.completed_at = now

    def _drop(self, cloud: MicroCloudState, h: HandoffRecord) -> None:
        h.kind = "c"
        h.dropped = len(h.records)
        h.status = "done"
        h.completed_at = self.engine.now
        self.metrics.handoffs["c"] += 1
        if h.records:
            self._count_loss(cloud, len(h.records))

    def _census(self, h: HandoffRecord, receiver: MicroCloudState) -> None:
        # LWW merge may leave a newer version at the receiver; an older one is a loss
        for k, rec in h.records.items():
            got = receiver.records.get(k)
            if got is None or getattr(got, "version", 0) < getattr(rec, "version", 0):
                self.metrics.census_mismatches += 1

    def _flush_deferred(self, cloud: MicroCloudState) -> None:
        pending, cloud.deferred = cloud.deferred, []
        for fn in pending:
            fn()
