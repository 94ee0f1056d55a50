"""Command-line entry point: ``mmc simulate|plan|check|replay``.

Exit codes: 0 success, 1 violations (or replay mismatch), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config
from .mobility import TraceFormatError, load_trace
from .planner import PlannerError, load_candidates, load_datasets, plan_report
from .storage import (DEFAULT_EXHAUSTIVE_BOUND, HistoryTooLargeError, MalformedHistoryError, OpHistory,
                      check_linearizable, check_staleness)

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE = 0, 1, 2

METRICS_FILE = "metrics.json"
HISTORY_FILE = "history.jsonl"


class UsageError(Exception):
    pass


def _load_scenario(path: str) -> ScenarioConfig:
    cfg = load_config(path)
    seed = os.environ.get("MMC_SEED")
    if seed is not None and seed.strip() != "":
        try:
            cfg.seed = int(seed)
        except ValueError:
            raise ConfigError([f"MMC_SEED: expected an integer, got {seed!r}"]) from None
    return cfg


def _run(cfg: ScenarioConfig):
    from .simulation import simulate
    try:
        return simulate(cfg)
    except (ValueError, TraceFormatError) as exc:
        raise ConfigError([f"trace: {exc}"]) from None


def cmd_simulate(args) -> int:
    cfg = _load_scenario(args.config)
    result = _run(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / METRICS_FILE).write_text(result.metrics_json(), encoding="utf-8")
    result.history.write(out / HISTORY_FILE)
    print(f"metrics: {out / METRICS_FILE}")
    print(f"history: {out / HISTORY_FILE} ({len(result.history)} ops)")
    if args.figures:
        from .report import simulation_figures
        for p in simulation_figures(result.metrics, args.figures):
            print(f"figure: {p}")
    return EXIT_OK


def _window(text: str | None) -> tuple[float, float] | None:
    if text is None:
        return None
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--window expects START,END in seconds, got {text!r}") from None
    return a, b


def cmd_plan(args) -> int:
    for label, p in (("trace", args.trace), ("candidates", args.candidates)):
        if not Path(p).exists():
            raise UsageError(f"{label} file not found: {p}")
    tracks = load_trace(args.trace)
    candidates = load_candidates(args.candidates)
    datasets = load_datasets(args.datasets) if args.datasets else None
    report = plan_report(tracks, candidates, theta=args.theta, fraction=args.fraction, bucket_width_s=args.bucket,
                         k=args.k, per_vehicle_storage=args.storage, window=_window(args.window),
                         datasets=datasets, period_s=args.period)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"report: {args.out}")
    else:
        sys.stdout.write(text)
    if args.figures:
        from .report import plan_figures
        for p in plan_figures(report, args.figures):
            print(f"figure: {p}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_check(args) -> int:
    if not Path(args.history).exists():
        raise UsageError(f"history file not found: {args.history}")
    h = OpHistory.load(args.history)
    if args.mode == "staleness":
        violations = check_staleness(h, args.epsilon)
        report = {"mode": "staleness", "epsilon_us": args.epsilon, "operations": len(h),
                  "violations": [v.to_json() for v in violations]}
        bad = bool(violations)
    else:
        res = check_linearizable(h, bound=args.bound)
        report = {"mode": "linearizable", "operations": len(h), "linearizable": res.linearizable,
                  "order": res.order, "witness": res.witness}
        bad = not res.linearizable
    sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_VIOLATIONS if bad else EXIT_OK


def cmd_replay(args) -> int:
    metrics_path = Path(args.verify)
    if not metrics_path.exists():
        raise UsageError(f"metrics file not found: {metrics_path}")
    cfg = _load_scenario(args.config)
    result = _run(cfg)
    ok = True
    if result.metrics_json().encode() != metrics_path.read_bytes():
        print(f"MISMATCH {metrics_path}")
        ok = False
    else:
        print(f"identical {metrics_path}")
    hist_path = metrics_path.with_name(HISTORY_FILE)
    if hist_path.exists():
        if result.history.dumps().encode() != hist_path.read_bytes():
            print(f"MISMATCH {hist_path}")
            ok = False
        else:
            print(f"identical {hist_path}")
    return EXIT_OK if ok else EXIT_VIOLATIONS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmc", description="Vehicular micro/macro cloud simulator and planner.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write metrics.json + history.jsonl")
    s.add_argument("config")
    s.add_argument("--out", default="mmc-out", help="output directory (default: mmc-out)")
    s.add_argument("--figures", metavar="DIR", help="also render PNG figures into DIR")
    s.set_defaults(func=cmd_simulate)

    pl = sub.add_parser("plan", help="select sites, fit availability, compute capacity, place datasets")
    pl.add_argument("trace")
    pl.add_argument("candidates")
    pl.add_argument("--theta", type=int, default=3)
    pl.add_argument("--fraction", type=float, default=0.9)
    pl.add_argument("--bucket", type=float, default=60.0, help="bucket width in seconds")
    pl.add_argument("--k", type=int, default=3, help="replication factor")
    pl.add_argument("--storage", type=int, help="per-vehicle storage bytes (default: trace minimum)")
    pl.add_argument("--window", help="capacity window START,END in seconds (default: whole period)")
    pl.add_argument("--period", type=float, help="aggregation period in seconds (e.g. 86400)")
    pl.add_argument("--datasets", help="CSV dataset_id,size_bytes to place")
    pl.add_argument("--out", help="write the JSON report here instead of stdout")
    pl.add_argument("--figures", metavar="DIR", help="also render PNG figures into DIR")
    pl.set_defaults(func=cmd_plan)

    c = sub.add_parser("check", help="check a history for staleness or linearizability")
    c.add_argument("history")
    c.add_argument("--epsilon", type=int, default=0, help="clock skew bound in microseconds")
    c.add_argument("--mode", choices=["staleness", "linearizable"], default="staleness")
    c.add_argument("--bound", type=int, default=DEFAULT_EXHAUSTIVE_BOUND,
                   help="maximum history size for the exhaustive search")
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("replay", help="re-run a scenario and byte-compare against recorded output")
    r.add_argument("config")
    r.add_argument("--verify", required=True, metavar="METRICS")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, PlannerError, TraceFormatError, MalformedHistoryError, HistoryTooLargeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
