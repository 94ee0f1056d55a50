"""Site selection, availability models, capacity and dataset placement.

Everything here is a pure function of the trace; nothing touches the engine.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .mobility import Region, VehicleTrack, position
from .simcore import US_PER_S, seconds


class PlannerError(ValueError):
    pass


CANDIDATE_HEADER = ["region_id", "center_x_m", "center_y_m", "radius_m"]
DATASET_HEADER = ["dataset_id", "size_bytes"]


def occupancy(tracks: list[VehicleTrack], region: Region, t: int) -> list[VehicleTrack]:
    out = []
    for tr in tracks:
        p = position(tr, t)
        if p is not None and region.contains(*p):
            out.append(tr)
    return out


def trace_end(tracks: list[VehicleTrack]) -> int:
    return max((tr.end for tr in tracks), default=0)


# -- site selection -------------------------------------------------------

def select_sites(tracks: list[VehicleTrack], candidates: list[Region], theta: int, f: float,
                 bucket_width_s: float) -> list[str]:
    """Regions holding at least ``theta`` vehicles for at least a fraction ``f`` of samples.

    Samples are taken every ``bucket_width_s`` from 0 through the end of the trace.
    """
    if not candidates:
        raise PlannerError("candidate list is empty")
    if theta < 1:
        raise PlannerError("theta must be >= 1")
    if not 0 < f <= 1:
        raise PlannerError("fraction must be in (0, 1]")
    if bucket_width_s <= 0:
        raise PlannerError("bucket width must be positive")
    if not tracks:
        return []
    step = seconds(bucket_width_s)
    times = list(range(0, trace_end(tracks) + 1, step))
    selected = []
    for region in candidates:
        hits = sum(1 for t in times if len(occupancy(tracks, region, t)) >= theta)
        if hits >= f * len(times):
            selected.append(region.region_id)
    return selected


# -- availability ---------------------------------------------------------

@dataclass
class BucketStats:
    mean_count: float
    min_count: int
    mean_storage_bytes: float
    mean_bandwidth_bps: float


@dataclass
class AvailabilityModel:
    region_id: str
    bucket_width_s: float
    period_s: float
    buckets: list[BucketStats] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"region_id": self.region_id, "bucket_width_s": self.bucket_width_s, "period_s": self.period_s,
                "buckets": [asdict(b) for b in self.buckets]}


def bucket_sample_times(i: int, width_us: int) -> list[int]:
    """Start, midpoint and end of bucket i."""
    start = i * width_us
    return [start, start + width_us // 2, start + width_us]


def fit_availability(tracks: list[VehicleTrack], region: Region, bucket_width_s: float,
                     period_s: float | None = None) -> AvailabilityModel:
    """Per-bucket occupancy stats from samples at bucket boundaries and midpoints.

    With ``period_s`` shorter than the trace, samples from every whole
    repetition of the period (e.g. every day) land in the same bucket.
    """
    if bucket_width_s <= 0:
        raise PlannerError("bucket width must be positive")
    width = seconds(bucket_width_s)
    end = trace_end(tracks)
    if period_s is None:
        n_buckets = max(1, math.ceil(end / width))
        period_us = n_buckets * width
    else:
        period_us = seconds(period_s)
        if period_us % width:
            raise PlannerError("period must be a whole number of buckets")
        n_buckets = period_us // width
    # only whole repetitions of the period; a ragged tail would read as empty
    reps = max(1, end // period_us)
    model = AvailabilityModel(region.region_id, bucket_width_s, period_us / US_PER_S)
    for i in range(n_buckets):
        counts, storage, bandwidth = [], [], []
        for r in range(reps):
            for t in bucket_sample_times(i, width):
                present = occupancy(tracks, region, r * period_us + t)
                counts.append(len(present))
                storage += [tr.storage_bytes for tr in present]
                bandwidth += [tr.bandwidth_bps for tr in present]
        model.buckets.append(BucketStats(
            mean_count=sum(counts) / len(counts),
            min_count=min(counts),
            mean_storage_bytes=sum(storage) / len(storage) if storage else 0.0,
            mean_bandwidth_bps=sum(bandwidth) / len(bandwidth) if bandwidth else 0.0))
    return model


# -- capacity -------------------------------------------------------------

@dataclass
class CapacityReport:
    region_id: str
    window: tuple[float, float]
    capacity_bytes: int
    limiting_bucket: int
    mean_capacity_bytes: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _window_buckets(m: AvailabilityModel, window: tuple[float, float]) -> range:
    start, end = seconds(window[0]), seconds(window[1])
    width = seconds(m.bucket_width_s)
    if start % width or end % width:
        raise PlannerError(f"window {window} is not aligned to {m.bucket_width_s}s buckets")
    if not 0 <= start < end <= len(m.buckets) * width:
        raise PlannerError(f"window {window} outside modeled period [0, {m.period_s})")
    return range(start // width, end // width)


def capacity(m: AvailabilityModel, window: tuple[float, float], k: int, s: int) -> CapacityReport:
    """Storable bytes: s * floor(min occupancy in window / k)."""
    if k < 1:
        raise PlannerError("replication factor must be >= 1")
    if s < 0:
        raise PlannerError("per-vehicle storage must be >= 0")
    idx = _window_buckets(m, window)
    limiting = min(idx, key=lambda i: (m.buckets[i].min_count, i))
    cap = s * (m.buckets[limiting].min_count // k)
    mean_load = sum(m.buckets[i].mean_count for i in idx) / len(idx)
    return CapacityReport(m.region_id, (window[0], window[1]), cap, limiting, s * math.floor(mean_load / k))


# -- placement ------------------------------------------------------------

@dataclass
class PlacementPlan:
    assignments: dict[str, str] = field(default_factory=dict)
    unplaced: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"assignments": dict(sorted(self.assignments.items())),
                "unplaced": dict(sorted(self.unplaced.items()))}


def place(datasets: list[tuple[str, int]], reports: list[CapacityReport]) -> PlacementPlan:
    """First-fit decreasing over regions ordered by descending capacity."""
    regions = sorted(reports, key=lambda r: (-r.capacity_bytes, r.region_id))
    remaining = {r.region_id: r.capacity_bytes for r in regions}
    largest = regions[0].capacity_bytes if regions else 0
    plan = PlacementPlan()
    for ds_id, size in sorted(datasets, key=lambda d: (-d[1], d[0])):
        for r in regions:
            if remaining[r.region_id] >= size:
                remaining[r.region_id] -= size
                plan.assignments[ds_id] = r.region_id
                break
        else:
            plan.unplaced[ds_id] = ("exceeds all capacities" if size > largest
                                    else "insufficient remaining capacity")
    return plan


def placed_bytes(plan: PlacementPlan, datasets: list[tuple[str, int]]) -> dict[str, int]:
    sizes = dict(datasets)
    out: dict[str, int] = {}
    for ds, rid in plan.assignments.items():
        out[rid] = out.get(rid, 0) + sizes[ds]
    return out


# -- file inputs ----------------------------------------------------------

def _read_csv(path: str | Path, header: list[str], what: str) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise PlannerError(f"{what} file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != header:
        raise PlannerError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def load_candidates(path: str | Path) -> list[Region]:
    out = []
    for n, row in enumerate(_read_csv(path, CANDIDATE_HEADER, "candidates"), start=2):
        try:
            rid, x, y, r = row
            out.append(Region(rid.strip(), (float(x), float(y)), float(r)))
        except ValueError as exc:
            raise PlannerError(f"{path}:{n}: bad candidate row ({exc})") from None
    return out


def load_datasets(path: str | Path) -> list[tuple[str, int]]:
    out = []
    for n, row in enumerate(_read_csv(path, DATASET_HEADER, "datasets"), start=2):
        try:
            ds, size = row
            out.append((ds.strip(), int(size)))
        except ValueError as exc:
            raise PlannerError(f"{path}:{n}: bad dataset row ({exc})") from None
    return out


# -- pipeline -------------------------------------------------------------

def plan_report(tracks: list[VehicleTrack], candidates: list[Region], theta: int = 3, fraction: float = 0.9,
                bucket_width_s: float = 60.0, k: int = 3, per_vehicle_storage: int | None = None,
                window: tuple[float, float] | None = None, datasets: list[tuple[str, int]] | None = None,
                period_s: float | None = None) -> dict:
    """Run the full pipeline and return a JSON-ready report."""
    params = {"theta": theta, "fraction": fraction, "bucket_width_s": bucket_width_s, "k": k,
              "per_vehicle_storage": per_vehicle_storage, "window": list(window) if window else None}
    report: dict = {"params": params, "sites": [], "models": {}, "capacities": [],
                    "placement": PlacementPlan().to_json()}
    if not tracks:
        return report
    sites = select_sites(tracks, candidates, theta, fraction, bucket_width_s)
    if per_vehicle_storage is None:
        per_vehicle_storage = min(tr.storage_bytes for tr in tracks)
        params["per_vehicle_storage"] = per_vehicle_storage
    by_id = {r.region_id: r for r in candidates}
    reports = []
    for rid in sites:
        m = fit_availability(tracks, by_id[rid], bucket_width_s, period_s)
        report["models"][rid] = m.to_json()
        w = window if window is not None else (0.0, m.period_s)
        reports.append(capacity(m, w, k, per_vehicle_storage))
    report["sites"] = sites
    report["capacities"] = [r.to_json() for r in reports]
    if datasets:
        report["placement"] = place(datasets, reports).to_json()
    return report
