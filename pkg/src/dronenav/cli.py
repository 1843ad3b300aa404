"""Command line interface: run one mission, run a batch, re-report logs.

Exit codes: 0 success, 2 configuration error, 3 mission timeout, 4 filter
divergence.  Batches exit 0 as long as they complete; per-mission failures
are recorded in their rows.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, build_batch, build_mission, load_config_file
from .reporting import (
    build_summary,
    load_outcome_rows,
    write_landing_scatter_csv,
    write_mission_artifacts,
    write_summary_json,
)
from .simworld import run_mission

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TIMEOUT = 3
EXIT_DIVERGED = 4

_STATUS_EXIT = {"finished": EXIT_OK, "timeout": EXIT_TIMEOUT, "aborted": EXIT_DIVERGED}


def run_cmd(config_path, seed=None, out_dir="out") -> int:
    try:
        cfg = load_config_file(config_path)
        mission = build_mission(cfg, seed=seed)
    except (ConfigError, OSError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    log = run_mission(mission)
    write_mission_artifacts(log, out_dir, index=0)
    print(f"status={log.status} seed={log.seed} steps={log.time.shape[0]} -> {out_dir}")
    if log.outcome is not None:
        print(
            f"landing: distance_to_center={log.outcome['distance_to_center']:.3f} m "
            f"hit={log.outcome['hit']}"
        )
    return _STATUS_EXIT.get(log.status, EXIT_DIVERGED)


def _run_batch_mission(args):
    index, label, mission, out_dir = args
    log = run_mission(mission)
    return write_mission_artifacts(log, Path(out_dir) / f"mission_{index:04d}", index)


def batch_cmd(spec_path, seed=None, workers=1, out_dir="out") -> int:
    try:
        cfg = load_config_file(spec_path)
        spec = build_batch(cfg, seed=seed)
    except (ConfigError, OSError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    jobs = [(index, label, mission, out_dir) for index, label, mission in spec.missions]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_batch_mission, jobs))
    else:
        rows = [_run_batch_mission(job) for job in jobs]
    rows.sort(key=lambda r: r["index"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = build_summary(rows)
    write_summary_json(summary, out / "summary.json")
    write_landing_scatter_csv(rows, out / "landing_scatter.csv")
    for label, stats in summary["combinations"].items():
        mean_d = stats["mean_distance_to_center"]
        print(
            f"{label}: trials={stats['trials']} hit_rate={stats['hit_rate']:.2f} "
            f"mean_distance={mean_d if mean_d is None else round(mean_d, 3)}"
        )
    print(f"batch complete: {len(rows)} missions -> {out / 'summary.json'}")
    return EXIT_OK


def report_cmd(logs_dir, out_dir=None) -> int:
    try:
        rows = load_outcome_rows(logs_dir)
    except (FileNotFoundError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir) if out_dir is not None else Path(logs_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = build_summary(rows)
    write_summary_json(summary, out / "summary.json")
    write_landing_scatter_csv(rows, out / "landing_scatter.csv")
    print(f"report: {len(rows)} missions -> {out / 'summary.json'}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dronenav", description="Delivery-drone navigation simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one mission from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out-dir", default="out")

    p_batch = sub.add_parser("batch", help="run a seeded batch from a spec file")
    p_batch.add_argument("spec")
    p_batch.add_argument("--seed", type=int, default=None)
    p_batch.add_argument("--workers", type=int, default=1)
    p_batch.add_argument("--out-dir", default="out")

    p_report = sub.add_parser("report", help="recompute statistics from stored logs")
    p_report.add_argument("logs_dir")
    p_report.add_argument("--out-dir", default=None)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return run_cmd(args.config, seed=args.seed, out_dir=args.out_dir)
    if args.command == "batch":
        return batch_cmd(args.spec, seed=args.seed, workers=args.workers, out_dir=args.out_dir)
    return report_cmd(args.logs_dir, out_dir=args.out_dir)


if __name__ == "__main__":
    sys.exit(main())
