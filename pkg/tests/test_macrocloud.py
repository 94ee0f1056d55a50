import random

import pytest

from mmc.config import parse_config
from mmc.macrocloud import (DiscoveryResult, Macrocloud, NotFound, PathBroken, ServiceDescriptor,
                            ServiceKind, Session, SessionRunner)
from mmc.microcloud import MicroCloudManager
from mmc.mobility import Region, VehicleTrack
from mmc.net import Network, RadioModel
from mmc.simcore import Engine, seconds
from mmc.simulation import simulate
from oracles import bfs_hops, unit_disk_graph

END = seconds(600)


def static_world(points, regions=(), storage=0):
    eng = Engine()
    tracks = [VehicleTrack.stationary(v, x, y, 0, END, storage_bytes=storage) for v, (x, y) in points.items()]
    net = Network(eng, tracks, RadioModel(), random.Random(0))
    clouds = MicroCloudManager(eng, net, regions) if regions else None
    return eng, net, Macrocloud(eng, net, clouds)


def chain(n, gap=250.0):
    return {f"c{i}": (gap * i, 0.0) for i in range(n)}


def individual(macro, service, provider):
    macro.register_service(ServiceDescriptor(service, provider, ServiceKind.INDIVIDUAL))


def test_adjacent_provider_found_with_ttl_one():
    eng, net, macro = static_world(chain(2))
    individual(macro, "svc", "c1")
    res = macro.discover_now(macro.new_request("svc", "c0", 1))
    assert isinstance(res, DiscoveryResult)
    assert res.provider == "c1" and res.hops == 1 and res.path == ("c0", "c1")


def test_register_twice_is_idempotent():
    _, _, macro = static_world(chain(2))
    individual(macro, "svc", "c1")
    individual(macro, "svc", "c1")
    assert macro.individual == {"c1": {"svc"}}


def test_origin_is_provider():
    _, _, macro = static_world(chain(2))
    individual(macro, "svc", "c0")
    res = macro.discover_now(macro.new_request("svc", "c0", 3))
    assert res.hops == 0 and res.path == ("c0",)


def test_ttl_cutoff():
    _, _, macro = static_world(chain(4))
    individual(macro, "svc", "c3")
    assert isinstance(macro.discover_now(macro.new_request("svc", "c0", 2)), NotFound)
    assert macro.discover_now(macro.new_request("svc", "c0", 3)).hops == 3


def test_tie_breaks_to_lowest_provider_id():
    pts = {"o": (0.0, 0.0), "p2": (200.0, 0.0), "p1": (0.0, 200.0)}
    _, _, macro = static_world(pts)
    individual(macro, "svc", "p2")
    individual(macro, "svc", "p1")
    assert macro.discover_now(macro.new_request("svc", "o", 1)).provider == "p1"


def test_unknown_provider_rejected():
    _, _, macro = static_world(chain(2))
    with pytest.raises(KeyError):
        individual(macro, "svc", "nobody")


def test_vacant_cloud_service_not_found_until_active():
    region = Region("R1", (500.0, 0.0), 100.0)
    pts = chain(3)
    eng = Engine()
    tracks = [VehicleTrack.stationary(v, x, y, 0, END) for v, (x, y) in pts.items()]
    tracks.append(VehicleTrack.stationary("m", 500.0, 0.0, seconds(5), END, storage_bytes=1 << 20))
    net = Network(eng, tracks, RadioModel())
    clouds = MicroCloudManager(eng, net, [region])
    macro = Macrocloud(eng, net, clouds)
    macro.register_service(ServiceDescriptor("svc", "R1"))
    clouds.start()
    eng.run_until(seconds(1))
    assert isinstance(macro.discover_now(macro.new_request("svc", "c0", 4)), NotFound)
    eng.run_until(seconds(6))
    res = macro.discover_now(macro.new_request("svc", "c0", 4))
    assert isinstance(res, DiscoveryResult) and res.provider == "R1" and res.provider_vehicle == "m"


@pytest.mark.parametrize("seed", range(3))
def test_discovery_matches_bfs(seed):
    rng = random.Random(seed)
    pts = {f"v{i:02d}": (rng.uniform(0, 1200), rng.uniform(0, 1200)) for i in range(40)}
    eng, net, macro = static_world(pts)
    providers = set(rng.sample(sorted(pts), 2))
    for p in providers:
        individual(macro, "svc", p)
    g = unit_disk_graph(pts, 300.0)
    results = {}
    for o in sorted(pts):
        for ttl in range(1, 6):
            macro.discover(macro.new_request("svc", o, ttl), lambda r, k=(o, ttl): results.__setitem__(k, r))
    eng.run_until(seconds(10))
    for (o, ttl), r in results.items():
        d = bfs_hops(g, o, providers)
        if d is not None and d <= ttl:
            assert isinstance(r, DiscoveryResult) and r.hops == d
        else:
            assert isinstance(r, NotFound)


def test_flood_message_bound():
    rng = random.Random(9)
    pts = {f"v{i:02d}": (rng.uniform(0, 800), rng.uniform(0, 800)) for i in range(30)}
    _, _, macro = static_world(pts)
    for ttl in range(6):
        res = macro.discover_now(macro.new_request("nothing", "v00", ttl))
        assert isinstance(res, NotFound)
        assert res.messages <= len(pts) * (ttl + 1)


def test_static_session_completes():
    eng, net, macro = static_world(chain(3))
    individual(macro, "svc", "c2")
    runner = SessionRunner(macro)
    s = Session("s1", "c0", "svc", 5, seconds(1), 100, 3, 0)
    runner.start(s)
    eng.run_until(seconds(10))
    assert s.status == "completed" and s.floods == 1 and s.breaks == 0
    assert macro.stats.as_dict()["floods_per_completed_session"] == 1.0


def test_provision_reports_broken_hop():
    eng = Engine()
    tracks = [VehicleTrack.stationary("c0", 0.0, 0.0, 0, END), VehicleTrack.stationary("c2", 500.0, 0.0, 0, END),
              VehicleTrack.stationary("c1", 250.0, 0.0, 0, seconds(2))]
    net = Network(eng, tracks, RadioModel())
    macro = Macrocloud(eng, net)
    individual(macro, "svc", "c2")
    res = macro.discover_now(macro.new_request("svc", "c0", 3))
    eng.run_until(seconds(3))
    out = []
    macro.provision(res, 10, out.append)
    eng.run_until(seconds(4))
    # hop 0 is the link c0 -> c1, which is gone by now
    assert isinstance(out[0], PathBroken) and out[0].hop == 0


def test_relay_departure_baseline_rediscovers():
    # the relay leaves mid-session; a second relay keeps the provider reachable
    eng = Engine()
    tracks = [VehicleTrack.stationary("c0", 0.0, 0.0, 0, END), VehicleTrack.stationary("c2", 500.0, 0.0, 0, END),
              VehicleTrack.stationary("a", 250.0, 0.0, 0, seconds(3)),
              VehicleTrack.stationary("b", 250.0, 50.0, 0, END)]
    net = Network(eng, tracks, RadioModel())
    macro = Macrocloud(eng, net, mode="baseline")
    individual(macro, "svc", "c2")
    runner = SessionRunner(macro)
    s = Session("s1", "c0", "svc", 6, seconds(1), 100, 3, 0)
    runner.start(s)
    eng.run_until(seconds(20))
    assert s.status == "completed"
    assert macro.stats.path_broken == 1 and macro.stats.rediscoveries == 1 and s.floods == 2


def paired(mode, seed):
    return parse_config({
        "name": "paired", "seed": seed, "duration_s": 300,
        "regions": [{"region_id": "R1", "center": [0, 0], "radius_m": 150}],
        "trace": {"synth": [{"region": "R1", "arrival_rate_per_s": 0.3, "dwell_mean_s": 20, "approach_m": 300}],
                  "stationary": [{"vehicle_id": "relay", "x": 200, "y": 0},
                                 {"vehicle_id": "u1", "x": 450, "y": 0}]},
        "discovery": {"mode": mode, "ttl_hops": 4},
        "services": [{"service_id": "svc", "region": "R1"}],
        "workload_gen": {"sessions": [{"clients": ["u1"], "service": "svc", "sessions_per_client": 3,
                                       "start_s": 20, "end_s": 200, "exchanges": 12, "interval_s": 5}]},
    })


def test_mmc_needs_fewer_floods_than_baseline():
    base = simulate(paired("baseline", 4)).metrics["discovery"]
    mmc = simulate(paired("mmc", 4)).metrics["discovery"]
    assert base["sessions_completed"] > 0 and mmc["sessions_completed"] > 0
    assert mmc["floods_per_completed_session"] < base["floods_per_completed_session"]
    assert mmc["geo_reresolutions"] > 0 and base["rediscoveries"] > 0
