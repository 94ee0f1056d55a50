import io
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmc.mobility import (DEFAULT_BANDWIDTH_BPS, DEFAULT_STORAGE_BYTES, Region, SynthParams, TraceFormatError,
                          VehicleTrack, dump_trace, load_trace, position, synth_arrivals, synth_generate,
                          vehicles_in_region)
from mmc.simcore import seconds

HEADER = "vehicle_id,t_us,x_m,y_m\n"


def test_header_only_is_empty():
    assert load_trace(io.StringIO(HEADER)) == []


def test_two_rows_one_track():
    tracks = load_trace(io.StringIO(HEADER + "a,1,0,0\na,2,1,1\n"))
    assert len(tracks) == 1
    assert [p.t for p in tracks[0].points] == [1, 2]
    assert tracks[0].storage_bytes == DEFAULT_STORAGE_BYTES
    assert tracks[0].bandwidth_bps == DEFAULT_BANDWIDTH_BPS


def test_decreasing_time_names_vehicle_and_line():
    with pytest.raises(TraceFormatError) as exc:
        load_trace(io.StringIO(HEADER + "a,5,0,0\nb,1,0,0\na,3,0,0\n"))
    assert exc.value.line == 4
    assert exc.value.vehicle_id == "a"
    assert "line 4" in str(exc.value) and "vehicle 'a'" in str(exc.value)


@pytest.mark.parametrize("body, what", [
    ("a,x,0,0\n", "unparseable"),
    ("a,1,0\n", "fields"),
    ("a,1,0,nan\n", "non-finite"),
])
def test_malformed_rows(body, what):
    with pytest.raises(TraceFormatError, match=what) as exc:
        load_trace(io.StringIO(HEADER + body))
    assert exc.value.line == 2


def test_bad_header():
    with pytest.raises(TraceFormatError):
        load_trace(io.StringIO("id,t,x,y\n"))


def test_resources_must_be_constant():
    text = "vehicle_id,t_us,x_m,y_m,storage_bytes,bandwidth_bps\na,1,0,0,10,5\na,2,0,0,11,5\n"
    with pytest.raises(TraceFormatError, match="constant"):
        load_trace(io.StringIO(text))


def test_round_trip_through_csv(tmp_path):
    tracks = synth_generate(SynthParams(0.2, 10.0, 100.0, seed=3, approach_m=50.0, storage_bytes=7))
    path = tmp_path / "t.csv"
    with path.open("w") as fh:
        dump_trace(tracks, fh)
    assert load_trace(path) == tracks


def test_position_at_sample_and_midpoint():
    tr = VehicleTrack("a", [0, seconds(10)], [0.0, 10.0], [0.0, 0.0])
    assert position(tr, 0) == (0.0, 0.0)
    assert position(tr, seconds(10)) == (10.0, 0.0)
    assert position(tr, seconds(5)) == (5.0, 0.0)


def test_position_outside_span_is_absent():
    tr = VehicleTrack("a", [seconds(1), seconds(2)], [0.0, 1.0], [0.0, 1.0])
    assert position(tr, seconds(1) - 1) is None
    assert position(tr, seconds(2) + 1) is None


def test_region_queries():
    r = Region("R", (0.0, 0.0), 100.0)
    assert vehicles_in_region([], r, 0) == set()
    on_edge = VehicleTrack.stationary("e", 100.0, 0.0, 0, 10)
    outside = VehicleTrack.stationary("o", 100.001, 0.0, 0, 10)
    assert vehicles_in_region([on_edge, outside], r, 5) == {"e"}


def test_occupancy_matches_brute_force_scan():
    rng = random.Random(11)
    tracks = []
    for i in range(50):
        n = rng.randint(1, 5)
        times = sorted(rng.sample(range(0, seconds(100), 1000), n))
        tracks.append(VehicleTrack(f"v{i}", times, [rng.uniform(-300, 300) for _ in times],
                                   [rng.uniform(-300, 300) for _ in times]))
    region = Region("R", (20.0, -10.0), 150.0)
    for t in range(0, seconds(100), seconds(2.5)):
        expected = set()
        for tr in tracks:
            # independent recomputation: find the bracketing pair by linear scan
            pts = list(zip(tr.times, tr.xs, tr.ys))
            if not pts[0][0] <= t <= pts[-1][0]:
                continue
            for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:] + [pts[-1]]):
                if t0 <= t <= t1:
                    f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
                    x, y = x0 + f * (x1 - x0), y0 + f * (y1 - y0)
                    break
            if math.hypot(x - 20.0, y + 10.0) <= 150.0:
                expected.add(tr.vehicle_id)
        assert vehicles_in_region(tracks, region, t) == expected


def test_zero_rate_gives_empty_trace():
    assert synth_generate(SynthParams(0.0, 10.0, 1000.0)) == []


def test_synth_is_deterministic():
    p = SynthParams(0.3, 15.0, 500.0, seed=9, approach_m=100.0)
    assert synth_generate(p) == synth_generate(p)
    assert synth_generate(p) != synth_generate(SynthParams(0.3, 15.0, 500.0, seed=10, approach_m=100.0))


def test_poisson_arrival_count_within_three_sigma():
    # rate 0.1/s over 10000 s: mean 1000, sigma sqrt(1000)
    for seed in range(5):
        n = len(synth_generate(SynthParams(0.1, 20.0, 10_000.0, seed=seed)))
        assert abs(n - 1000) <= 3 * math.sqrt(1000)


def test_exponential_dwell_mean_within_three_sigma():
    tracks = synth_generate(SynthParams(1.0, 25.0, 2000.0, seed=1))
    region = Region("R", (0.0, 0.0), 100.0)
    dwell = [(tr.times[-1] - tr.times[0]) / 1e6 for tr in tracks]
    n = len(dwell)
    # exponential: sd equals the mean
    assert abs(sum(dwell) / n - 25.0) <= 3 * 25.0 / math.sqrt(n)
    # entry and exit points lie on the region boundary
    for tr in tracks[:50]:
        for x, y in ((tr.xs[0], tr.ys[0]), (tr.xs[-1], tr.ys[-1])):
            assert region.distance_to_center(x, y) == pytest.approx(100.0)


def test_arrival_gaps_are_exponential():
    gaps = []
    prev = 0.0
    for t in synth_arrivals(2.0, 5000.0, random.Random(5)):
        gaps.append(t - prev)
        prev = t
    n = len(gaps)
    assert abs(sum(gaps) / n - 0.5) <= 3 * 0.5 / math.sqrt(n)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)), min_size=2, max_size=8),
       st.integers(0, 10**7))
def test_interpolation_stays_in_bracketing_box(coords, t):
    times = [i * 10**6 + 17 for i in range(len(coords))]
    tr = VehicleTrack("v", times, [c[0] for c in coords], [c[1] for c in coords])
    p = position(tr, t)
    if not times[0] <= t <= times[-1]:
        assert p is None
        return
    i = max(j for j in range(len(times)) if times[j] <= t)
    k = min(i + 1, len(times) - 1)
    xs = (coords[i][0], coords[k][0])
    ys = (coords[i][1], coords[k][1])
    assert min(xs) - 1e-6 <= p[0] <= max(xs) + 1e-6
    assert min(ys) - 1e-6 <= p[1] <= max(ys) + 1e-6
