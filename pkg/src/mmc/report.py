"""Static figures for simulation metrics and planner reports (PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .simcore import US_PER_S  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def simulation_figures(metrics: dict, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    rows = metrics.get("replica_census_timeline", [])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for rid in sorted({r[1] for r in rows}):
        mine = [r for r in rows if r[1] == rid]
        ts = [r[0] / US_PER_S for r in mine]
        ax1.step(ts, [r[3] for r in mine], where="post", label=rid)
        ax2.step(ts, [r[4] for r in mine], where="post", label=f"{rid} keys")
        ax2.step(ts, [r[5] for r in mine], where="post", linestyle="--", label=f"{rid} at target")
    ax1.set_ylabel("members")
    ax2.set_ylabel("records")
    ax2.set_xlabel("time (s)")
    if rows:
        ax1.legend(fontsize="small")
        ax2.legend(fontsize="small")
    paths.append(_save(fig, outdir / "membership_census.png"))

    fig, ax = plt.subplots(figsize=(5, 3))
    h = metrics.get("handoffs", {})
    kinds = sorted(h)
    ax.bar(kinds, [h[k] for k in kinds])
    ax.set_title(f"hand-offs (records lost: {metrics.get('data_loss_records', 0)})")
    paths.append(_save(fig, outdir / "handoffs.png"))
    return paths


def plan_figures(report: dict, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(8, 4))
    for rid, m in sorted(report.get("models", {}).items()):
        w = m["bucket_width_s"]
        xs = [i * w for i in range(len(m["buckets"]))]
        line, = ax.step(xs, [b["mean_count"] for b in m["buckets"]], where="post", label=f"{rid} mean")
        ax.step(xs, [b["min_count"] for b in m["buckets"]], where="post", linestyle="--",
                color=line.get_color(), label=f"{rid} min")
    ax.set_xlabel("bucket start (s)")
    ax.set_ylabel("vehicles in region")
    if report.get("models"):
        ax.legend(fontsize="small")
    paths.append(_save(fig, outdir / "occupancy.png"))

    fig, ax = plt.subplots(figsize=(6, 3))
    caps = report.get("capacities", [])
    ids = [c["region_id"] for c in caps]
    ax.bar(ids, [c["capacity_bytes"] / 2**20 for c in caps], label="min-based")
    ax.plot(ids, [c["mean_capacity_bytes"] / 2**20 for c in caps], "o", color="k", label="mean-based")
    ax.set_ylabel("capacity (MiB)")
    if caps:
        ax.legend(fontsize="small")
    paths.append(_save(fig, outdir / "capacity.png"))
    return paths
