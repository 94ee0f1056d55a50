import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmc.mobility import Region, SynthParams, VehicleTrack, synth_generate, vehicles_in_region
from mmc.planner import (AvailabilityModel, BucketStats, PlannerError, capacity, fit_availability, place,
                         placed_bytes, select_sites)
from mmc.simcore import seconds
from oracles import best_feasible_placement, capacity_loop

MiB = 1 << 20
R = Region("R", (0.0, 0.0), 100.0)


def parked(n, end_s=3600, x=0.0):
    return [VehicleTrack.stationary(f"p{i}", x + i, 0.0, 0, seconds(end_s), storage_bytes=MiB, bandwidth_bps=5)
            for i in range(n)]


def model_from(min_counts, width=60.0):
    return AvailabilityModel("R", width, width * len(min_counts),
                             [BucketStats(float(c), c, 0.0, 0.0) for c in min_counts])


# -- select_sites -----------------------------------------------------------------

def test_empty_trace_selects_nothing():
    assert select_sites([], [R], 3, 1.0, 60) == []


def test_constant_occupancy_selected():
    assert select_sites(parked(5), [R], 3, 1.0, 60) == ["R"]
    assert select_sites(parked(5), [R], 6, 0.5, 60) == []


def test_empty_candidates_rejected():
    with pytest.raises(PlannerError):
        select_sites(parked(1), [], 1, 1.0, 60)


def test_site_selection_matches_recount():
    tracks = synth_generate(SynthParams(0.5, 30.0, 600.0, center=(0.0, 0.0), radius_m=400.0, seed=2))
    rng = random.Random(5)
    regions = [Region(f"C{i}", (rng.uniform(-300, 300), rng.uniform(-300, 300)), rng.uniform(50, 200))
               for i in range(10)]
    width = 30.0
    end = max(t.end for t in tracks)
    times = list(range(0, end + 1, seconds(width)))
    for theta in (1, 2, 4):
        for f in (0.25, 0.5, 0.9):
            expected = []
            for reg in regions:
                hits = 0
                for t in times:
                    if len(vehicles_in_region(tracks, reg, t)) >= theta:
                        hits += 1
                if hits >= f * len(times):
                    expected.append(reg.region_id)
            assert select_sites(tracks, regions, theta, f, width) == expected


def test_site_selection_monotone():
    tracks = synth_generate(SynthParams(0.5, 30.0, 600.0, center=(0.0, 0.0), radius_m=400.0, seed=3))
    regions = [Region(f"C{i}", (60.0 * i - 300, 0.0), 150.0) for i in range(10)]
    prev = None
    for theta in range(1, 6):
        got = set(select_sites(tracks, regions, theta, 0.5, 30))
        assert prev is None or got <= prev
        prev = got
    prev = None
    for f in (0.1, 0.3, 0.6, 0.9, 1.0):
        got = set(select_sites(tracks, regions, 2, f, 30))
        assert prev is None or got <= prev
        prev = got


# -- fit_availability ---------------------------------------------------------------

def test_constant_four_vehicles():
    m = fit_availability(parked(4, end_s=86_400), R, 3600.0, period_s=86_400)
    assert len(m.buckets) == 24
    assert all(b.min_count == 4 and b.mean_count == 4 for b in m.buckets)
    assert all(b.mean_storage_bytes == MiB and b.mean_bandwidth_bps == 5 for b in m.buckets)


def test_empty_region_all_zero():
    m = fit_availability(parked(3, x=1000.0), R, 60.0)
    assert m.buckets and all(b.min_count == 0 and b.mean_count == 0 for b in m.buckets)
    assert all(b.mean_storage_bytes == 0 for b in m.buckets)


def test_poisson_load_matches_littles_law():
    lam, dwell = 0.5, 40.0
    tracks = synth_generate(SynthParams(lam, dwell, 4000.0, center=R.center, radius_m=R.radius_m, seed=11))
    m = fit_availability(tracks, R, 200.0, period_s=4000.0)
    # skip warm-up; occupancy of an M/G/inf queue is Poisson with mean lam * dwell
    means = [b.mean_count for b in m.buckets[2:-1]]
    load = lam * dwell
    # each bucket mean averages 3 correlated samples; use the single-sample sigma as a loose bound
    for x in means:
        assert abs(x - load) <= 3 * math.sqrt(load)
    overall = sum(means) / len(means)
    assert abs(overall - load) <= 3 * math.sqrt(load) / math.sqrt(len(means) / 2)


def test_sampling_gap_is_measured():
    # a vehicle that visits between samples is invisible to the sampled model
    visitor = VehicleTrack.stationary("ghost", 0.0, 0.0, seconds(10), seconds(20))
    m = fit_availability([visitor] + parked(1, end_s=120, x=1000.0), R, 60.0)
    assert all(b.mean_count == 0 for b in m.buckets)


# -- capacity -------------------------------------------------------------------

def test_capacity_formula_instance():
    rep = capacity(model_from([8, 6, 7]), (0, 180), 3, 64 * MiB)
    assert rep.capacity_bytes == 128 * MiB
    assert rep.limiting_bucket == 1


def test_zero_bucket_zeroes_capacity():
    assert capacity(model_from([9, 0, 9]), (0, 180), 1, MiB).capacity_bytes == 0


def test_limiting_bucket_earliest_tie():
    assert capacity(model_from([5, 3, 3, 4]), (0, 240), 1, 1).limiting_bucket == 1


def test_window_outside_period_rejected():
    with pytest.raises(PlannerError):
        capacity(model_from([1, 2]), (60, 240), 1, 1)
    with pytest.raises(PlannerError):
        capacity(model_from([1, 2]), (30, 120), 1, 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=24), st.integers(1, 6), st.integers(0, 10**9),
       st.data())
def test_capacity_equals_straight_loop(counts, k, s, data):
    a = data.draw(st.integers(0, len(counts) - 1))
    b = data.draw(st.integers(a + 1, len(counts)))
    rep = capacity(model_from(counts), (60.0 * a, 60.0 * b), k, s)
    assert (rep.capacity_bytes, rep.limiting_bucket) == capacity_loop(counts, a, b, k, s)
    # pure function of its inputs
    assert capacity(model_from(counts), (60.0 * a, 60.0 * b), k, s) == rep
    # a wider window never has more capacity
    if b < len(counts):
        assert capacity(model_from(counts), (60.0 * a, 60.0 * (b + 1)), k, s).capacity_bytes <= rep.capacity_bytes


def test_mean_capacity_reported():
    rep = capacity(model_from([3, 9]), (0, 120), 3, 10)
    assert rep.capacity_bytes == 10 and rep.mean_capacity_bytes == 20


# -- place ------------------------------------------------------------------------

def reports(caps):
    return [capacity(model_from([c]), (0, 60), 1, 1) for c in caps]


def test_single_dataset_goes_to_largest():
    reps = reports([10, 20])
    reps[1].region_id = "big"
    plan = place([("d", 5)], reps)
    assert plan.assignments == {"d": "big"}


def test_too_large_dataset_unplaced():
    plan = place([("huge", 100)], reports([10, 20]))
    assert plan.unplaced == {"huge": "exceeds all capacities"}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=0, max_size=8), st.lists(st.integers(0, 80), min_size=1, max_size=4))
def test_placement_feasible_and_checked_exhaustively(sizes, caps):
    reps = reports(caps)
    for i, rep in enumerate(reps):
        rep.region_id = f"R{i}"
    datasets = [(f"d{i}", s) for i, s in enumerate(sizes)]
    plan = place(datasets, reps)
    loads = placed_bytes(plan, datasets)
    for rep in reps:
        assert loads.get(rep.region_id, 0) <= rep.capacity_bytes
    assert set(plan.assignments) | set(plan.unplaced) == {d for d, _ in datasets}
    placed = sum(loads.values())
    best = best_feasible_placement(sizes, caps)
    assert placed <= best
    # everything fits whenever it all fits in the single largest region
    if sum(sizes) <= max(caps):
        assert placed == sum(sizes)
    # first-fit decreasing bound: each unplaced dataset was refused by every region's leftover
    left = {rep.region_id: rep.capacity_bytes - loads.get(rep.region_id, 0) for rep in reps}
    for d in plan.unplaced:
        size = dict(datasets)[d]
        assert all(size > room for room in left.values())
