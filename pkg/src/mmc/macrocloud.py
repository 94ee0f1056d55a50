"""Wide-area service discovery and provisioning over V2V.

Discovery floods a DISCOVER message with duplicate suppression and a hop
budget. Providers answer along the reverse path; the origin takes the first
reply to arrive (fewest hops), breaking same-instant ties by provider id.

Two provisioning modes are supported. In ``baseline`` mode a broken path
forces a fresh flood. In ``mmc`` mode a micro-cloud provider is re-resolved
by forwarding geographically toward its fixed region, so no flood is needed
while the cloud is alive.
"""

from __future__ import annotations

import enum
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .microcloud import CloudStatus, MicroCloudManager
from .mobility import Region
from .net import Message, Network
from .simcore import Engine, SimTime

MODES = ("baseline", "mmc")


class ServiceKind(str, enum.Enum):
    MICRO_CLOUD = "micro_cloud"
    INDIVIDUAL = "individual"


@dataclass(frozen=True)
class ServiceDescriptor:
    service_id: str
    provider: str
    kind: ServiceKind = ServiceKind.MICRO_CLOUD

    def __post_init__(self):
        if not self.service_id:
            raise ValueError("service_id must be non-empty")


@dataclass(frozen=True)
class DiscoveryRequest:
    request_id: str
    service_id: str
    origin: str
    ttl_hops: int
    issued_at: SimTime = 0

    def __post_init__(self):
        if self.ttl_hops < 0:
            raise ValueError("ttl_hops must be >= 0")


@dataclass(frozen=True)
class DiscoveryResult:
    request_id: str
    service_id: str
    provider: str
    provider_vehicle: str
    path: tuple[str, ...]
    hops: int
    resolved_at: SimTime
    messages: int = 0


@dataclass(frozen=True)
class NotFound:
    request_id: str
    service_id: str
    reason: str = "no provider within ttl"
    messages: int = 0


@dataclass(frozen=True)
class Delivered:
    path: tuple[str, ...]
    at: SimTime


@dataclass(frozen=True)
class PathBroken:
    hop: int
    reason: str
    at: SimTime


Matcher = Callable[[str, SimTime], Optional[str]]


@dataclass
class _Flood:
    req: DiscoveryRequest
    on_done: Callable
    match: Matcher
    seen: set = field(default_factory=set)
    replies: list = field(default_factory=list)
    done: bool = False
    messages: int = 0


@dataclass
class DiscoveryStats:
    floods_issued: Counter = field(default_factory=Counter)
    floods_completed: Counter = field(default_factory=Counter)
    discovery_messages: int = 0
    max_messages_per_flood: int = 0
    sessions_started: int = 0
    sessions_completed: int = 0
    sessions_failed: int = 0
    path_broken: int = 0
    rediscoveries: int = 0
    geo_reresolutions: int = 0
    geo_failures: int = 0
    exchanges: int = 0

    def as_dict(self) -> dict:
        issued = sum(self.floods_issued.values())
        completed = sum(self.floods_completed.values())
        session_floods = self.floods_issued["session"]
        return {
            "floods_issued": issued,
            "floods_completed": completed,
            "floods_issued_by_purpose": dict(sorted(self.floods_issued.items())),
            "floods_completed_by_purpose": dict(sorted(self.floods_completed.items())),
            "discovery_messages": self.discovery_messages,
            "max_messages_per_flood": self.max_messages_per_flood,
            "sessions_started": self.sessions_started,
            "sessions_completed": self.sessions_completed,
            "sessions_failed": self.sessions_failed,
            "path_broken": self.path_broken,
            "rediscoveries": self.rediscoveries,
            "geo_reresolutions": self.geo_reresolutions,
            "geo_failures": self.geo_failures,
            "exchanges": self.exchanges,
            "session_floods": session_floods,
            "floods_per_completed_session": (
                round(session_floods / self.sessions_completed, 6) if self.sessions_completed else None),
        }


class Macrocloud:
    def __init__(self, engine: Engine, net: Network, clouds: MicroCloudManager | None = None,
                 mode: str = "mmc", link_attempts: int = 4):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.engine = engine
        self.net = net
        self.clouds = clouds
        self.mode = mode
        self.link_attempts = link_attempts
        self.individual: dict[str, set[str]] = {}
        self.location_services: dict[str, Region] = {}
        self.stats = DiscoveryStats()
        self._req_ids = itertools.count(1)
        if clouds is not None:
            clouds.macro = self

    # -- registration ----------------------------------------------------

    def register_service(self, d: ServiceDescriptor) -> None:
        if d.kind is ServiceKind.INDIVIDUAL:
            if d.provider not in self.net.tracks:
                raise KeyError(f"unknown provider vehicle {d.provider!r}")
            self.individual.setdefault(d.provider, set()).add(d.service_id)
        else:
            if self.clouds is None or d.provider not in self.clouds.clouds:
                raise KeyError(f"unknown provider region {d.provider!r}")
            # kept with the logically fixed region; only answered while Active
            self.clouds.clouds[d.provider].services.add(d.service_id)

    def register_location_service(self, service_id: str, region: Region) -> None:
        """Baseline realisation of a location service: any car inside the region offers it."""
        self.location_services[service_id] = region

    def provider_id(self, u: str, service_id: str, t: SimTime) -> str | None:
        if service_id in self.individual.get(u, ()):
            return u
        reg = self.location_services.get(service_id)
        if reg is not None and self._participant(u):
            p = self.net.position(u, t)
            if p is not None and reg.contains(*p):
                return u
        if self.clouds is not None:
            c = self.clouds.cloud_coordinated_by(u)
            if c is not None and not c.transferring:
                if service_id in c.services or service_id == f"cloud:{c.region_id}":
                    return c.region_id
        return None

    def _participant(self, u: str) -> bool:
        if self.clouds is not None:
            return self.clouds.participant(u)
        return self.net.tracks[u].storage_bytes > 0

    def new_request(self, service_id: str, origin: str, ttl: int) -> DiscoveryRequest:
        return DiscoveryRequest(f"q{next(self._req_ids)}", service_id, origin, ttl, self.engine.now)

    # -- discovery -------------------------------------------------------

    def discover(self, req: DiscoveryRequest, on_done: Callable, match: Matcher | None = None,
                 purpose: str = "session") -> None:
        """Start a flood at the current engine time; ``on_done`` gets a DiscoveryResult or NotFound."""
        if not self.net.is_present(req.origin, self.engine.now):
            raise LookupError(f"origin {req.origin!r} absent at t={self.engine.now}")
        match = match or (lambda u, t: self.provider_id(u, req.service_id, t))
        fl = _Flood(req, on_done, match, seen={req.origin})
        self.stats.floods_issued[purpose] += 1
        lat = self.net.radio.hop_latency_us
        now = self.engine.now

        def finish(outcome):
            if fl.done:
                return
            fl.done = True
            self.stats.discovery_messages += fl.messages
            self.stats.max_messages_per_flood = max(self.stats.max_messages_per_flood, fl.messages)
            if isinstance(outcome, DiscoveryResult):
                self.stats.floods_completed[purpose] += 1
            on_done(outcome)

        own = match(req.origin, now)
        if own is not None:
            res = DiscoveryResult(req.request_id, req.service_id, own, req.origin, (req.origin,), 0, now)
            self.engine.at(now, req.origin, "discover-self", lambda ev: finish(res))
            return
        if req.ttl_hops == 0:
            self.engine.at(now, req.origin, "discover-ttl0",
                           lambda ev: finish(NotFound(req.request_id, req.service_id)))
            return

        def decide(ev):
            hops, provider, path, pv = min(fl.replies, key=lambda r: (r[0], r[1]))
            finish(DiscoveryResult(req.request_id, req.service_id, provider, pv, path, hops,
                                   self.engine.now, fl.messages))

        def on_reply(provider, path):
            first = not fl.replies
            fl.replies.append((len(path) - 1, provider, path, path[-1]))
            if first and not fl.done:
                # runs after every reply delivered at this same instant
                self.engine.at(self.engine.now, req.origin, "discover-decide", decide)

        def receive(m: Message, u: str):
            if fl.done or u in fl.seen:
                return
            fl.seen.add(u)
            path = m.body["path"] + (u,)
            t = self.engine.now
            provider = fl.match(u, t)
            if provider is not None:
                back = tuple(reversed(path))
                self._relay(back, "REPLY", fl, lambda end: on_reply(provider, path), None)
                return
            if m.ttl_hops > 0 and self.net.is_present(u, t):
                self._flood_from(u, path, m.ttl_hops - 1, fl, receive)

        self._flood_from(req.origin, (req.origin,), req.ttl_hops - 1, fl, receive)
        timeout = (2 * req.ttl_hops * self.link_attempts + 1) * lat
        self.engine.at(now + timeout, req.origin, "discover-timeout",
                       lambda ev: finish(NotFound(req.request_id, req.service_id, messages=fl.messages)))

    def _flood_from(self, u: str, path: tuple, ttl_left: int, fl: _Flood, receive) -> None:
        msg = self.net.message(u, "*", "DISCOVER",
                               {"request": fl.req.request_id, "path": path}, ttl_hops=ttl_left)
        fl.messages += 1
        self.net.broadcast(msg, self.engine.now, receive)

    def _relay(self, path: tuple, kind: str, fl: _Flood | None, on_arrive, on_fail) -> None:
        """Hop-by-hop reliable transfer along ``path`` starting at the current time."""
        def hop(i: int) -> None:
            if i == len(path) - 1:
                on_arrive(path[-1])
                return
            src, dst = path[i], path[i + 1]
            if not self.net.is_present(src, self.engine.now):
                if on_fail is not None:
                    on_fail(i)
                return
            if fl is not None:
                fl.messages += 1
            msg = self.net.message(src, dst, kind)
            self.net.reliable_unicast(msg, lambda m: hop(i + 1),
                                      None if on_fail is None else (lambda m: on_fail(i)),
                                      attempts=self.link_attempts)
        hop(0)

    def send_along(self, path, kind: str, body, on_arrive: Callable[[str], None],
                   on_fail: Callable[[], None]) -> None:
        self._relay(tuple(path), kind, None, on_arrive, lambda i: on_fail())

    def discover_now(self, req: DiscoveryRequest, match: Matcher | None = None):
        """Run a single discovery to completion on an otherwise idle engine."""
        box = []
        self.discover(req, box.append, match=match)
        self.engine.run_while(lambda: not box, limit=2 ** 62)
        return box[0]

    # -- provisioning ----------------------------------------------------

    def endpoint_valid(self, result: DiscoveryResult, end: str, t: SimTime) -> bool:
        if self.clouds is not None and result.provider in self.clouds.clouds:
            c = self.clouds.clouds[result.provider]
            return c.status is CloudStatus.ACTIVE and end in c.members
        return self.provider_id(end, result.service_id, t) == result.provider

    def provision(self, result: DiscoveryResult, payload_bytes: int,
                  on_done: Callable[[Delivered | PathBroken], None]) -> None:
        """Send one payload along the recorded path, checking every hop when it is taken."""
        def arrive(end):
            now = self.engine.now
            self.stats.exchanges += 1
            if self.endpoint_valid(result, end, now):
                on_done(Delivered(result.path, now))
            else:
                on_done(PathBroken(len(result.path) - 1, "provider gone", now))
        self._relay(result.path, "DATA", None, arrive,
                    lambda i: on_done(PathBroken(i, "hop out of range", self.engine.now)))

    def geo_forward(self, origin: str, region_id: str, on_done: Callable[[tuple | None], None],
                    max_hops: int = 32) -> None:
        """Greedy geographic forwarding toward a region until a cloud member is reached."""
        cloud = self.clouds.clouds[region_id]
        region = cloud.region

        def at(path: tuple) -> None:
            u = path[-1]
            now = self.engine.now
            if cloud.status is CloudStatus.ACTIVE and u in cloud.members:
                on_done(path)
                return
            pos = self.net.position(u, now)
            if pos is None or len(path) > max_hops:
                on_done(None)
                return
            here = region.distance_to_center(*pos)
            best = None
            for w in self.net.sorted_neighbors(u, now):
                if w in path:
                    continue
                d = region.distance_to_center(*self.net.position(w, now))
                if d < here and (best is None or (d, w) < best):
                    best = (d, w)
            if best is None:
                on_done(None)
                return
            w = best[1]
            self.net.reliable_unicast(self.net.message(u, w, "DATA"), lambda m: at(path + (w,)),
                                      lambda m: on_done(None), attempts=self.link_attempts)
        at((origin,))


@dataclass
class Session:
    session_id: str
    client: str
    service_id: str
    exchanges_total: int
    interval_us: SimTime
    payload_bytes: int
    ttl: int
    started_at: SimTime
    exchanges_done: int = 0
    floods: int = 0
    breaks: int = 0
    geo_repairs: int = 0
    failures: int = 0
    status: str = "discovering"
    result: DiscoveryResult | None = None
    completed_at: SimTime | None = None


class SessionRunner:
    """Drives long-lasting sessions: discover once, then exchange periodically."""

    def __init__(self, macro: Macrocloud, max_failures: int = 5):
        self.macro = macro
        self.engine = macro.engine
        self.max_failures = max_failures
        self.sessions: list[Session] = []

    def start(self, session: Session) -> None:
        self.sessions.append(session)
        self.macro.stats.sessions_started += 1
        self._discover(session)

    def _alive(self, s: Session) -> bool:
        if s.status in ("completed", "failed"):
            return False
        if not self.macro.net.is_present(s.client, self.engine.now):
            s.status = "failed"
            self.macro.stats.sessions_failed += 1
            return False
        return True

    def _discover(self, s: Session) -> None:
        if not self._alive(s):
            return
        s.floods += 1
        req = self.macro.new_request(s.service_id, s.client, s.ttl)
        self.macro.discover(req, lambda out: self._discovered(s, out), purpose="session")

    def _discovered(self, s: Session, out) -> None:
        if not self._alive(s):
            return
        if isinstance(out, DiscoveryResult):
            s.result = out
            s.status = "active"
            s.failures = 0
            self._exchange(s)
            return
        s.failures += 1
        if s.failures >= self.max_failures:
            s.status = "failed"
            self.macro.stats.sessions_failed += 1
            return
        self.engine.after(s.interval_us, s.client, "session-retry", lambda ev: self._discover(s))

    def _exchange(self, s: Session) -> None:
        if not self._alive(s):
            return
        self.macro.provision(s.result, s.payload_bytes, lambda out: self._exchanged(s, out))

    def _exchanged(self, s: Session, out) -> None:
        if isinstance(out, Delivered):
            self._progress(s)
            return
        s.breaks += 1
        self.macro.stats.path_broken += 1
        clouds = self.macro.clouds
        if (self.macro.mode == "mmc" and clouds is not None and s.result is not None
                and s.result.provider in clouds.clouds):
            self._geo_repair(s)
        else:
            self.macro.stats.rediscoveries += 1
            self._discover(s)

    def _geo_repair(self, s: Session) -> None:
        if not self._alive(s):
            return
        res = s.result

        def done(path):
            if path is None:
                self.macro.stats.geo_failures += 1
                self.macro.stats.rediscoveries += 1
                self._discover(s)
                return
            s.geo_repairs += 1
            self.macro.stats.geo_reresolutions += 1
            self.macro.stats.exchanges += 1
            s.result = DiscoveryResult(res.request_id, res.service_id, res.provider, path[-1],
                                       path, len(path) - 1, self.engine.now)
            self._progress(s)
        self.macro.geo_forward(s.client, res.provider, done)

    def _progress(self, s: Session) -> None:
        s.exchanges_done += 1
        if s.exchanges_done >= s.exchanges_total:
            s.status = "completed"
            s.completed_at = self.engine.now
            self.macro.stats.sessions_completed += 1
            return
        self.engine.after(s.interval_us, s.client, "session-exchange", lambda ev: self._exchange(s))
