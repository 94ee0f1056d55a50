"""Builds a full scenario from a ScenarioConfig, runs it, and reports metrics."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .config import ScenarioConfig
from .macrocloud import Macrocloud, ServiceDescriptor, ServiceKind, Session, SessionRunner
from .microcloud import MembershipParams, MicroCloudManager
from .mobility import Region, SynthParams, VehicleTrack, load_trace, synth_arrivals, synth_generate
from .net import Network, RadioModel
from .scenarios import rotating_membership
from .simcore import ClockModel, Engine, seconds
from .storage import GeoKey, OpHistory, StorageParams, StorageService, check_staleness


PARKED_MARGIN_S = 60.0


@dataclass
class SimulationResult:
    metrics: dict
    history: OpHistory
    sim: "Simulation"

    def metrics_json(self) -> str:
        return json.dumps(self.metrics, sort_keys=True, indent=2) + "\n"


def _summary(values: list[int]) -> dict:
    if not values:
        return {"count": 0}
    v = sorted(values)
    n = len(v)
    return {"count": n, "min": v[0], "p50": v[(n - 1) // 2], "p90": v[min(n - 1, (9 * n) // 10)],
            "max": v[-1], "mean": round(sum(v) / n, 3)}


class Simulation:
    def __init__(self, cfg: ScenarioConfig, keep_log: bool = False):
        self.cfg = cfg
        self.duration_us = seconds(cfg.duration_s)
        self.regions = [Region(r.region_id, tuple(r.center), r.radius_m) for r in cfg.regions]
        self.region_by_id = {r.region_id: r for r in self.regions}
        self.tracks = self._build_tracks()
        seed = cfg.seed
        clock = ClockModel.draw([t.vehicle_id for t in self.tracks], cfg.storage.epsilon_us,
                                random.Random(f"{seed}:clock"))
        self.engine = Engine(clock, keep_log=keep_log)
        radio = RadioModel(cfg.radio.v2v_range_m, cfg.radio.hop_latency_us, cfg.radio.loss_prob)
        self.net = Network(self.engine, self.tracks, radio, random.Random(f"{seed}:net"))
        m = cfg.membership
        self.clouds = MicroCloudManager(self.engine, self.net, self.regions, MembershipParams(
            m.heartbeat_period_s, m.timeout_multiplier, m.handoff_neighbor_search_hops, m.lookahead_s,
            m.membership_floor))
        self.macro = Macrocloud(self.engine, self.net, self.clouds, mode=cfg.discovery.mode)
        s = cfg.storage
        self.storage = StorageService(self.engine, self.net, self.clouds, self.macro, StorageParams(
            s.replication_factor, s.ttl_hops, seconds(s.op_timeout_s), s.max_attempts))
        self.sessions = SessionRunner(self.macro)
        self.census_timeline: list[list] = []
        self._next_census = 0
        self.clouds.tick_hooks.append(self._census_tick)
        for svc in cfg.services:
            if cfg.discovery.mode == "mmc":
                self.macro.register_service(ServiceDescriptor(svc.service_id, svc.region, ServiceKind.MICRO_CLOUD))
            else:
                self.macro.register_location_service(svc.service_id, self.region_by_id[svc.region])

    # -- inputs ----------------------------------------------------------

    def _build_tracks(self) -> list[VehicleTrack]:
        cfg = self.cfg
        s = cfg.storage
        tracks: list[VehicleTrack] = []
        path = cfg.trace_path()
        if path is not None:
            tracks += load_trace(path, s.default_storage_bytes, s.default_bandwidth_bps)
        for i, sy in enumerate(cfg.trace.synth):
            reg = self.region_by_id[sy.region]
            tracks += synth_generate(SynthParams(
                sy.arrival_rate_per_s, sy.dwell_mean_s, max(cfg.duration_s, 1e-6), reg.center, reg.radius_m,
                sy.approach_m, seed=cfg.seed * 1000 + i, id_prefix=sy.id_prefix or f"{sy.region}.s{i}.",
                storage_bytes=s.default_storage_bytes if sy.storage_bytes is None else sy.storage_bytes,
                bandwidth_bps=s.default_bandwidth_bps if sy.bandwidth_bps is None else sy.bandwidth_bps))
        for ro in cfg.trace.rotating:
            tracks += rotating_membership(
                self.region_by_id[ro.region], cfg.duration_s, ro.cohort_size, ro.period_s, ro.overlap_s,
                s.default_storage_bytes if ro.storage_bytes is None else ro.storage_bytes, ro.id_prefix)
        for st in cfg.trace.stationary:
            # without an explicit end, parked devices outlive the run so the
            # horizon is not mistaken for a departure by the hand-off lookahead
            end = st.end_s if st.end_s is not None else max(cfg.duration_s, st.start_s) + PARKED_MARGIN_S
            tracks.append(VehicleTrack.stationary(st.vehicle_id, st.x, st.y, seconds(st.start_s), seconds(end),
                                                  st.storage_bytes, st.bandwidth_bps))
        ids = [t.vehicle_id for t in tracks]
        dup = sorted({v for v in ids if ids.count(v) > 1}) if len(set(ids)) != len(ids) else []
        if dup:
            raise ValueError(f"duplicate vehicle ids in trace: {dup[:5]}")
        return sorted(tracks, key=lambda t: t.vehicle_id)

    def _schedule_workload(self) -> None:
        cfg = self.cfg
        ops = []
        for i, o in enumerate(cfg.workload):
            ops.append((seconds(o.at_s), i, o.model_dump()))
        base = len(ops)
        for gi, g in enumerate(cfg.workload_gen.storage):
            rng = random.Random(f"{cfg.seed}:storage-gen:{gi}")
            for client in g.clients:
                counter = 0
                for kind, rate in (("write", g.writes_per_s), ("read", g.reads_per_s)):
                    for t in synth_arrivals(rate, g.end_s - g.start_s, rng):
                        key = f"k{rng.randrange(g.keys)}"
                        op = {"op": kind, "client": client, "key": key, "region": g.region}
                        if kind == "write":
                            counter += 1
                            op["value"] = f"{client}#{counter}"
                            op["size_bytes"] = g.value_bytes
                        ops.append((seconds(g.start_s + t), base + len(ops), op))
            if g.final_reads_at_s is not None:
                for j in range(g.keys):
                    ops.append((seconds(g.final_reads_at_s), base + len(ops),
                                {"op": "read", "client": g.clients[j % len(g.clients)], "key": f"k{j}",
                                 "region": g.region, "final": True}))
        for gi, g in enumerate(cfg.workload_gen.sessions):
            rng = random.Random(f"{cfg.seed}:session-gen:{gi}")
            for client in g.clients:
                for _ in range(g.sessions_per_client):
                    t = rng.uniform(g.start_s, g.end_s)
                    ops.append((seconds(t), base + len(ops), {
                        "op": "session", "client": client, "service": g.service, "exchanges": g.exchanges,
                        "interval_s": g.interval_s, "payload_bytes": g.payload_bytes}))
        ops.sort(key=lambda x: (x[0], x[1]))
        n_sessions = 0
        for at, _, op in ops:
            if at > self.duration_us:
                continue
            if op["op"] == "session":
                n_sessions += 1
                sess = Session(f"s{n_sessions}", op["client"], op["service"], op["exchanges"],
                               seconds(op["interval_s"]), op["payload_bytes"], cfg.discovery.ttl_hops, at)
                self.engine.at(at, op["client"], "session-start",
                               lambda ev, sess=sess: self._start_session(sess))
            else:
                gk = GeoKey(op["region"], op["key"])
                self.storage.submit(op["client"], op["op"], gk, op.get("value"), op.get("size_bytes"), at)

    def _start_session(self, sess: Session) -> None:
        if self.net.is_present(sess.client, self.engine.now):
            self.sessions.start(sess)

    def _census_tick(self, t: int) -> None:
        if t < self._next_census:
            return
        self._next_census = t + seconds(self.cfg.metrics.census_period_s)
        for rid, c in sorted(self.clouds.clouds.items()):
            target = self.storage.replica_target(c)
            at_target = sum(1 for k in c.records if len(self.storage.holders(c, k)) == target)
            self.census_timeline.append([t, rid, c.status.value, len(c.members), len(c.records), at_target])

    # -- run -------------------------------------------------------------

    def run(self) -> SimulationResult:
        if self.duration_us > 0:
            self.clouds.start(stop_at=self.duration_us)
            self._schedule_workload()
            self.engine.run_until(self.duration_us)
        history = OpHistory(sorted(self.storage.history, key=lambda e: (e.invoke_us, e.client, e.respond_us)))
        return SimulationResult(self.metrics(history), history, self)

    def metrics(self, history: OpHistory) -> dict:
        cm = self.clouds.metrics
        st = self.storage.stats
        violations = check_staleness(history, self.cfg.storage.epsilon_us) if history else []
        return {
            "scenario": self.cfg.name,
            "seed": self.cfg.seed,
            "config_sha256": self.cfg.digest(),
            "duration_us": self.duration_us,
            "vehicles": len(self.tracks),
            "engine": {"events_scheduled": self.engine.scheduled, "events_delivered": self.engine.delivered,
                       "events_pending": self.engine.pending()},
            "discovery": self.macro.stats.as_dict(),
            "handoffs": dict(cm.handoffs),
            "data_loss_records": cm.data_loss_records,
            "data_loss_events": cm.data_loss_events,
            "vacancies": cm.vacancies,
            "membership": {"joins": cm.joins, "leaves": cm.leaves, "evictions": cm.evictions,
                           "coordinator_failures": cm.coordinator_failures,
                           "repopulated_with_remote_records": cm.repopulated_with_remote_records},
            "handoff_census_mismatches": cm.census_mismatches,
            "storage": {
                "writes_ok": st.writes_ok, "writes_unavailable": st.writes_unavailable,
                "storage_exhaustion_rejections": st.storage_exhaustion_rejections,
                "reads_ok": st.reads_ok, "reads_not_found": st.reads_not_found,
                "reads_unavailable": st.reads_unavailable, "chases": st.chases,
                "lost_updates": st.lost_updates, "replica_pushes": st.replica_pushes,
                "write_latency_us": _summary(st.write_latency_us),
                "read_latency_us": _summary(st.read_latency_us),
            },
            "staleness_violations": len(violations),
            "replica_census_timeline": self.census_timeline,
            "replica_census_final": self.storage.census(),
            "messages": self.net.stats.as_dict(),
        }


def simulate(cfg: ScenarioConfig, keep_log: bool = False) -> SimulationResult:
    return Simulation(cfg, keep_log=keep_log).run()
