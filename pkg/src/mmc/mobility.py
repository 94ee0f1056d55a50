"""Mobility traces: CSV ingestion, synthetic generation, and position queries."""

from __future__ import annotations

import csv
import io
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .simcore import SimTime, seconds

DEFAULT_STORAGE_BYTES = 64 * 1024 * 1024
DEFAULT_BANDWIDTH_BPS = 6_000_000

TRACE_COLUMNS = ("vehicle_id", "t_us", "x_m", "y_m")
RESOURCE_COLUMNS = ("storage_bytes", "bandwidth_bps")


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, vehicle_id: str | None = None):
        self.line = line
        self.vehicle_id = vehicle_id
        where = []
        if line is not None:
            where.append(f"line {line}")
        if vehicle_id is not None:
            where.append(f"vehicle {vehicle_id!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class Region:
    region_id: str
    center: tuple[float, float]
    radius_m: float

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError(f"region {self.region_id}: radius must be positive")

    def contains(self, x: float, y: float) -> bool:
        dx = x - self.center[0]
        dy = y - self.center[1]
        return dx * dx + dy * dy <= self.radius_m * self.radius_m

    def distance_to_center(self, x: float, y: float) -> float:
        return math.hypot(x - self.center[0], y - self.center[1])


@dataclass(frozen=True)
class TracePoint:
    vehicle_id: str
    t: SimTime
    x: float
    y: float


@dataclass
class VehicleTrack:
    vehicle_id: str
    times: list[SimTime]
    xs: list[float]
    ys: list[float]
    storage_bytes: int = DEFAULT_STORAGE_BYTES
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS

    def __post_init__(self):
        if not self.times:
            raise ValueError(f"track {self.vehicle_id} has no points")
        if not (len(self.times) == len(self.xs) == len(self.ys)):
            raise ValueError(f"track {self.vehicle_id}: ragged point arrays")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError(f"track {self.vehicle_id}: timestamps must strictly increase")
        if self.storage_bytes < 0 or self.bandwidth_bps < 0:
            raise ValueError(f"track {self.vehicle_id}: negative resources")

    @classmethod
    def stationary(cls, vehicle_id: str, x: float, y: float, start: SimTime, end: SimTime,
                   storage_bytes: int = 0, bandwidth_bps: int = 0) -> "VehicleTrack":
        """A parked car, roadside unit or user device. Zero storage by default."""
        if end <= start:
            return cls(vehicle_id, [start], [x], [y], storage_bytes, bandwidth_bps)
        return cls(vehicle_id, [start, end], [x, x], [y, y], storage_bytes, bandwidth_bps)

    @property
    def points(self) -> list[TracePoint]:
        return [TracePoint(self.vehicle_id, t, x, y) for t, x, y in zip(self.times, self.xs, self.ys)]

    @property
    def start(self) -> SimTime:
        return self.times[0]

    @property
    def end(self) -> SimTime:
        return self.times[-1]

    def present(self, t: SimTime) -> bool:
        return self.times[0] <= t <= self.times[-1]


def position(track: VehicleTrack, t: SimTime) -> tuple[float, float] | None:
    """Linearly interpolated position at ``t``; None outside the track's time span."""
    times = track.times
    if t < times[0] or t > times[-1]:
        return None
    i = bisect_right(times, t) - 1
    if times[i] == t or i == len(times) - 1:
        return (track.xs[i], track.ys[i])
    t0, t1 = times[i], times[i + 1]
    frac = (t - t0) / (t1 - t0)
    x0, y0 = track.xs[i], track.ys[i]
    return (x0 + (track.xs[i + 1] - x0) * frac, y0 + (track.ys[i + 1] - y0) * frac)


def vehicles_in_region(tracks: Iterable[VehicleTrack], region: Region, t: SimTime) -> set[str]:
    inside = set()
    for tr in tracks:
        p = position(tr, t)
        if p is not None and region.contains(*p):
            inside.add(tr.vehicle_id)
    return inside


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def load_trace(source, default_storage_bytes: int = DEFAULT_STORAGE_BYTES,
               default_bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS) -> list[VehicleTrack]:
    """Parse a trace CSV (path, bytes, or stream) into tracks sorted by vehicle id."""
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return []
        if tuple(header[:4]) != TRACE_COLUMNS or len(header) not in (4, 6) or (
                len(header) == 6 and tuple(header[4:]) != RESOURCE_COLUMNS):
            raise TraceFormatError(
                f"bad header {header!r}; expected {','.join(TRACE_COLUMNS)}[,{','.join(RESOURCE_COLUMNS)}]",
                line=1)
        has_resources = len(header) == 6
        pts: dict[str, tuple[list, list, list]] = {}
        resources: dict[str, tuple[int, int]] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"expected {len(header)} fields, got {len(row)}", line=line)
            vid = row[0].strip()
            if not vid:
                raise TraceFormatError("empty vehicle_id", line=line)
            try:
                t = int(row[1])
                x = float(row[2])
                y = float(row[3])
            except ValueError as exc:
                raise TraceFormatError(f"unparseable number ({exc})", line=line, vehicle_id=vid) from None
            if t < 0:
                raise TraceFormatError("negative time", line=line, vehicle_id=vid)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TraceFormatError("non-finite coordinate", line=line, vehicle_id=vid)
            times, xs, ys = pts.setdefault(vid, ([], [], []))
            if times and t <= times[-1]:
                raise TraceFormatError(f"non-monotonic time {t} after {times[-1]}", line=line, vehicle_id=vid)
            times.append(t)
            xs.append(x)
            ys.append(y)
            if has_resources:
                try:
                    res = (int(row[4]), int(row[5]))
                except ValueError as exc:
                    raise TraceFormatError(f"unparseable number ({exc})", line=line, vehicle_id=vid) from None
                if vid in resources and resources[vid] != res:
                    raise TraceFormatError("resource columns must be constant per vehicle",
                                           line=line, vehicle_id=vid)
                resources[vid] = res
        tracks = []
        for vid in sorted(pts):
            storage, bw = resources.get(vid, (default_storage_bytes, default_bandwidth_bps))
            try:
                tracks.append(VehicleTrack(vid, *pts[vid], storage_bytes=storage, bandwidth_bps=bw))
            except ValueError as exc:
                raise TraceFormatError(str(exc), vehicle_id=vid) from None
        return tracks
    finally:
        if close:
            fh.close()


def dump_trace(tracks: Sequence[VehicleTrack], fh: IO[str], with_resources: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS + (RESOURCE_COLUMNS if with_resources else ()))
    for tr in tracks:
        for t, x, y in zip(tr.times, tr.xs, tr.ys):
            row = [tr.vehicle_id, t, repr(float(x)), repr(float(y))]
            if with_resources:
                row += [tr.storage_bytes, tr.bandwidth_bps]
            w.writerow(row)


@dataclass
class SynthParams:
    """Poisson arrivals into a circular region, exponential dwell, straight transit.

    ``approach_m`` extends each chord outside the region on both sides so the
    vehicle is on the road (and can relay) before entering and after leaving.
    """

    arrival_rate_per_s: float
    dwell_mean_s: float
    duration_s: float
    center: tuple[float, float] = (0.0, 0.0)
    radius_m: float = 100.0
    approach_m: float = 0.0
    seed: int = 0
    id_prefix: str = "v"
    storage_bytes: int = DEFAULT_STORAGE_BYTES
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arrival_rate_per_s < 0:
            raise ValueError("arrival_rate_per_s must be >= 0")
        if self.dwell_mean_s <= 0 or self.duration_s <= 0 or self.radius_m <= 0:
            raise ValueError("dwell_mean_s, duration_s and radius_m must be positive")
        if self.approach_m < 0:
            raise ValueError("approach_m must be >= 0")


def synth_arrivals(rate: float, duration_s: float, rng: random.Random) -> list[float]:
    out = []
    if rate <= 0:
        return out
    t = rng.expovariate(rate)
    while t < duration_s:
        out.append(t)
        t += rng.expovariate(rate)
    return out


def synth_generate(p: SynthParams) -> list[VehicleTrack]:
    rng = random.Random(f"synth:{p.seed}:{p.id_prefix}")
    cx, cy = p.center
    tracks = []
    for i, arrive_s in enumerate(synth_arrivals(p.arrival_rate_per_s, p.duration_s, rng)):
        dwell_s = rng.expovariate(1.0 / p.dwell_mean_s)
        a = rng.uniform(0.0, 2.0 * math.pi)
        b = a + math.pi + rng.uniform(-math.pi / 2, math.pi / 2)
        ex, ey = cx + p.radius_m * math.cos(a), cy + p.radius_m * math.sin(a)
        fx, fy = cx + p.radius_m * math.cos(b), cy + p.radius_m * math.sin(b)
        chord = math.hypot(fx - ex, fy - ey)
        t_in = seconds(arrive_s)
        t_out = max(t_in + 1, seconds(arrive_s + dwell_s))
        pts = [(t_in, ex, ey), (t_out, fx, fy)]
        if p.approach_m > 0 and chord > 0:
            ux, uy = (fx - ex) / chord, (fy - ey) / chord
            lead = max(1, round((t_out - t_in) * p.approach_m / chord))
            start = t_in - lead
            sx, sy = ex - ux * p.approach_m, ey - uy * p.approach_m
            if start < 0:
                # clip the approach leg at t=0
                frac = t_in / lead
                sx, sy = ex - ux * p.approach_m * frac, ey - uy * p.approach_m * frac
                start = 0
            if start < t_in:
                pts.insert(0, (start, sx, sy))
            pts.append((t_out + lead, fx + ux * p.approach_m, fy + uy * p.approach_m))
        times, xs, ys = (list(c) for c in zip(*pts))
        tracks.append(VehicleTrack(f"{p.id_prefix}{i:05d}", times, xs, ys,
                                   storage_bytes=p.storage_bytes, bandwidth_bps=p.bandwidth_bps))
    return tracks
