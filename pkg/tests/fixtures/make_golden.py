"""Regenerate the plan fixture and its golden report.

The golden report is produced by an independent recount (own CSV parsing,
own interpolation, own sampling loops), not by the package's planner.
Run from the repository root: ``python3 tests/fixtures/make_golden.py``.
"""

import csv
import json
import math
from pathlib import Path

HERE = Path(__file__).parent
THETA, FRACTION, BUCKET, K = 2, 0.5, 60.0, 2
WINDOW = (60.0, 540.0)


def write_inputs():
    from mmc.mobility import SynthParams, dump_trace, synth_generate

    tracks = synth_generate(SynthParams(0.25, 40.0, 600.0, center=(0.0, 0.0), radius_m=150.0, approach_m=100.0,
                                        seed=21, id_prefix="a", storage_bytes=8 << 20))
    tracks += synth_generate(SynthParams(0.05, 30.0, 600.0, center=(600.0, 0.0), radius_m=100.0, seed=22,
                                         id_prefix="b", storage_bytes=8 << 20))
    with open(HERE / "plan_trace.csv", "w", newline="") as fh:
        dump_trace(sorted(tracks, key=lambda t: t.vehicle_id), fh)
    with open(HERE / "plan_candidates.csv", "w", newline="") as fh:
        fh.write("region_id,center_x_m,center_y_m,radius_m\nA,0,0,150\nB,600,0,100\nC,-2000,0,100\nD,100,0,80\n")
    with open(HERE / "plan_datasets.csv", "w", newline="") as fh:
        fh.write("dataset_id,size_bytes\n")
        for i, size in enumerate([9, 7, 5, 4, 3, 2, 30, 1]):
            fh.write(f"ds{i},{size << 20}\n")


def read_trace():
    tracks = {}
    with open(HERE / "plan_trace.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            tr = tracks.setdefault(row["vehicle_id"], {"pts": [], "storage": int(row["storage_bytes"]),
                                                       "bw": int(row["bandwidth_bps"])})
            tr["pts"].append((int(row["t_us"]), float(row["x_m"]), float(row["y_m"])))
    return tracks


def where(tr, t):
    pts = tr["pts"]
    if t < pts[0][0] or t > pts[-1][0]:
        return None
    for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:]):
        if t0 <= t <= t1:
            f = (t - t0) / (t1 - t0)
            return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
    return pts[-1][1], pts[-1][2]


def inside(tracks, cand, t):
    _, cx, cy, r = cand
    out = []
    for tr in tracks.values():
        p = where(tr, t)
        if p is not None and (p[0] - cx) ** 2 + (p[1] - cy) ** 2 <= r * r:
            out.append(tr)
    return out


def main():
    write_inputs()
    tracks = read_trace()
    with open(HERE / "plan_candidates.csv", newline="") as fh:
        cands = [(r["region_id"], float(r["center_x_m"]), float(r["center_y_m"]), float(r["radius_m"]))
                 for r in csv.DictReader(fh)]
    with open(HERE / "plan_datasets.csv", newline="") as fh:
        datasets = [(r["dataset_id"], int(r["size_bytes"])) for r in csv.DictReader(fh)]
    w = int(BUCKET * 1e6)
    end = max(tr["pts"][-1][0] for tr in tracks.values())
    grid = list(range(0, end + 1, w))
    sites = [c[0] for c in cands
             if sum(len(inside(tracks, c, t)) >= THETA for t in grid) >= FRACTION * len(grid)]
    s = min(tr["storage"] for tr in tracks.values())
    n_buckets = math.ceil(end / w)
    models, caps = {}, []
    for c in cands:
        if c[0] not in sites:
            continue
        buckets = []
        for i in range(n_buckets):
            counts, st, bw = [], [], []
            for t in (i * w, i * w + w // 2, (i + 1) * w):
                here = inside(tracks, c, t)
                counts.append(len(here))
                st += [tr["storage"] for tr in here]
                bw += [tr["bw"] for tr in here]
            buckets.append({"mean_count": sum(counts) / 3, "min_count": min(counts),
                            "mean_storage_bytes": sum(st) / len(st) if st else 0.0,
                            "mean_bandwidth_bps": sum(bw) / len(bw) if bw else 0.0})
        models[c[0]] = {"region_id": c[0], "bucket_width_s": BUCKET, "period_s": n_buckets * BUCKET,
                        "buckets": buckets}
        lo, hi = int(WINDOW[0] // BUCKET), int(WINDOW[1] // BUCKET)
        mins = [buckets[i]["min_count"] for i in range(lo, hi)]
        low = min(mins)
        lim = lo + mins.index(low)
        mean_load = sum(buckets[i]["mean_count"] for i in range(lo, hi)) / (hi - lo)
        caps.append({"region_id": c[0], "window": list(WINDOW), "capacity_bytes": s * (low // K),
                     "limiting_bucket": lim, "mean_capacity_bytes": s * math.floor(mean_load / K)})
    # first-fit decreasing, regions by descending capacity
    order = sorted(caps, key=lambda c: (-c["capacity_bytes"], c["region_id"]))
    room = {c["region_id"]: c["capacity_bytes"] for c in order}
    assignments, unplaced = {}, {}
    for ds, size in sorted(datasets, key=lambda d: (-d[1], d[0])):
        target = next((c["region_id"] for c in order if room[c["region_id"]] >= size), None)
        if target is None:
            big = order[0]["capacity_bytes"] if order else 0
            unplaced[ds] = "exceeds all capacities" if size > big else "insufficient remaining capacity"
        else:
            room[target] -= size
            assignments[ds] = target
    report = {"params": {"theta": THETA, "fraction": FRACTION, "bucket_width_s": BUCKET, "k": K,
                         "per_vehicle_storage": s, "window": list(WINDOW)},
              "sites": sites, "models": models, "capacities": caps,
              "placement": {"assignments": dict(sorted(assignments.items())), "unplaced": dict(sorted(unplaced.items()))}}
    (HERE / "plan_golden.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(json.dumps({"sites": sites, "capacities": caps, "placement": report["placement"]}, indent=1))


if __name__ == "__main__":
    main()
