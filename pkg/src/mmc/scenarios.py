"""Trace builders for the reference scenarios and the bundled config files."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

from .mobility import DEFAULT_STORAGE_BYTES, Region, VehicleTrack
from .simcore import seconds


def rotating_membership(region: Region, duration_s: float, cohort_size: int = 3, period_s: float = 60.0,
                        overlap_s: float = 10.0, storage_bytes: int = DEFAULT_STORAGE_BYTES,
                        id_prefix: str = "r") -> list[VehicleTrack]:
    """Cohorts of cars that fully replace each other every ``period_s``.

    Cohort k occupies the region during [k*period, (k+1)*period + overlap].
    A negative overlap leaves the region empty for ``-overlap`` seconds
    before the next cohort arrives. Cars drift slowly inside the region.
    """
    tracks = []
    cx, cy = region.center
    n_cohorts = max(1, math.ceil(duration_s / period_s))
    for k in range(n_cohorts):
        start = seconds(k * period_s)
        end = seconds((k + 1) * period_s + overlap_s)
        if end <= start:
            continue
        for j in range(cohort_size):
            a = 2 * math.pi * (j + 0.5 * (k % 2)) / cohort_size
            r0, r1 = 0.3 * region.radius_m, 0.6 * region.radius_m
            xs = [cx + r0 * math.cos(a), cx + r1 * math.cos(a)]
            ys = [cy + r0 * math.sin(a), cy + r1 * math.sin(a)]
            tracks.append(VehicleTrack(f"{id_prefix}{k:03d}-{j}", [start, end], xs, ys,
                                       storage_bytes=storage_bytes))
    return tracks


def bundled_scenarios() -> dict[str, Path]:
    """The reference scenario configs shipped with the package."""
    root = resources.files("mmc") / "scenarios"
    return {p.name.rsplit(".", 1)[0]: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith((".yaml", ".yml"))}
