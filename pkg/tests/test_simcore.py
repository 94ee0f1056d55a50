import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmc.simcore import ClockModel, Engine, PastEventError, UnknownVehicleError, seconds


def test_schedule_at_now_fires_after_current_event():
    eng = Engine()
    order = []

    def first(ev):
        order.append("first")
        eng.at(eng.now, "b", "second", lambda ev: order.append("second"))

    eng.at(0, "a", "first", first)
    eng.at(0, "c", "third", lambda ev: order.append("third"))
    eng.run_until(0)
    # the nested event was inserted last, so it runs after the already queued one
    assert order == ["first", "third", "second"]


def test_past_event_rejected():
    eng = Engine()
    eng.at(seconds(1), "x")
    eng.run_until(seconds(1))
    with pytest.raises(PastEventError, match="past event"):
        eng.at(eng.now - 1, "x")


def test_equal_time_events_keep_insertion_order():
    eng = Engine()
    for i in range(20):
        eng.at(100, f"v{i}", i)
    log = eng.run_until(100)
    assert [e.payload for e in log] == list(range(20))


def test_empty_queue_advances_time():
    eng = Engine()
    assert eng.run_until(seconds(10)) == []
    assert eng.now == seconds(10)


def test_single_event_run_until():
    eng = Engine()
    eng.at(seconds(5), "v")
    assert len(eng.run_until(seconds(10))) == 1


def _random_run(seed):
    rng = random.Random(seed)
    eng = Engine()

    def spawn(ev):
        if rng.random() < 0.3:
            eng.after(rng.randrange(0, 1000), f"v{rng.randrange(10)}", rng.random(), spawn)

    for _ in range(1000):
        eng.at(rng.randrange(0, 10_000), f"v{rng.randrange(10)}", rng.random(), spawn)
    eng.run_until(20_000)
    return [e.log_entry() for e in eng.log], eng


def test_random_events_replay_identically():
    a, _ = _random_run(7)
    b, _ = _random_run(7)
    assert a == b
    assert len(a) >= 1000


def test_no_event_loss_or_duplication():
    _, eng = _random_run(3)
    assert eng.pending() == 0
    assert eng.delivered == eng.scheduled
    seqs = [e.seq for e in eng.log]
    assert len(set(seqs)) == len(seqs)


def test_zero_epsilon_is_identity():
    clock = ClockModel.draw(["a", "b", "c"], 0, random.Random(1))
    eng = Engine(clock)
    eng.at(seconds(3), "a")
    eng.run_until(seconds(3))
    assert all(eng.gps_now(v) == seconds(3) for v in "abc")


def test_fixed_offset_is_added():
    eng = Engine(ClockModel(5000, {"v": 3000}))
    eng.run_until(10_000)
    assert eng.gps_now("v") == 13_000


def test_unknown_vehicle():
    eng = Engine(ClockModel(10, {"v": 0}))
    with pytest.raises(UnknownVehicleError):
        eng.gps_now("w")


def test_clock_bound_over_seeded_vehicles():
    eps = 5000
    ids = [f"v{i}" for i in range(100)]
    clock = ClockModel.draw(ids, eps, random.Random(42))
    for v in ids:
        for t in (0, 1, eps, seconds(1), seconds(3600)):
            assert abs(clock.gps_time(v, t) - t) <= eps
    # the offsets actually spread over the interval
    offs = [clock.offset(v) for v in ids]
    assert min(offs) < -eps // 2 and max(offs) > eps // 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=200))
def test_delivery_is_time_then_insertion_ordered(times):
    eng = Engine()
    for i, t in enumerate(times):
        eng.at(t, "v", i)
    log = eng.run_until(10**6)
    keys = [(e.fire_at, e.payload) for e in log]
    assert keys == sorted(keys)
    assert len(log) == len(times)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(-(10**6), 10**6), st.integers(0, 10**9))
def test_clock_bound_property(eps, raw_offset, t):
    off = max(-eps, min(eps, raw_offset))
    c = ClockModel(eps, {"v": off})
    assert abs(c.gps_time("v", t) - t) <= eps
