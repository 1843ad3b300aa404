"""Log serialization and batch statistics.

All files use meters, radians, and seconds.  Serialization is byte-stable:
floats are written with shortest round-trip repr and JSON keys are sorted,
so identical runs produce identical bytes regardless of platform or worker
count.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .simworld import MissionLog

TRAJECTORY_SCHEMA_COMMENT = "# dronenav trajectory schema v1; units: meters, radians, seconds"
TRAJECTORY_COLUMNS = (
    "time",
    "truth_x",
    "truth_y",
    "truth_z",
    "truth_roll",
    "truth_pitch",
    "truth_yaw",
    "est_x",
    "est_y",
    "est_z",
    "est_roll",
    "est_pitch",
    "est_yaw",
    "est_bias_x",
    "est_bias_y",
    "est_bias_z",
    "est_gyro_bias_x",
    "est_gyro_bias_y",
    "est_gyro_bias_z",
    "cov_x",
    "cov_y",
    "cov_z",
    "cov_roll",
    "cov_pitch",
    "cov_yaw",
    "cov_bias_x",
    "cov_bias_y",
    "cov_bias_z",
    "cov_gyro_bias_x",
    "cov_gyro_bias_y",
    "cov_gyro_bias_z",
    "sector",
    "lyapunov",
    "cmd_x",
    "cmd_y",
    "cmd_z",
    "bias_latched",
    "meas_sdk",
    "meas_aruco_large",
    "meas_aruco_small",
    "meas_uwb",
    "meas_rejected",
)

SCATTER_COLUMNS = (
    "mission_index",
    "label",
    "seed",
    "status",
    "landed",
    "hit",
    "truth_x",
    "truth_y",
    "est_x",
    "est_y",
    "distance_to_center",
    "estimate_error",
)


def _fmt(value) -> str:
    return repr(float(value))


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_trajectory_csv(log: MissionLog, path) -> None:
    n = log.time.shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_SCHEMA_COMMENT + "\n")
        fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for i in range(n):
            cells = [
                _fmt(log.time[i]),
                *(_fmt(v) for v in log.truth_position[i]),
                *(_fmt(v) for v in log.truth_euler[i]),
                *(_fmt(v) for v in log.estimate_mean[i]),
                *(_fmt(v) for v in log.covariance_diag[i]),
                str(int(log.sector[i])),
                _fmt(log.lyapunov[i]),
                *(_fmt(v) for v in log.command[i]),
                str(int(log.bias_latched[i])),
                *(str(int(v)) for v in log.measurements_applied[i]),
                str(int(log.measurements_rejected[i])),
            ]
            fh.write(",".join(cells) + "\n")


def write_events_json(log: MissionLog, path) -> None:
    _dump_json(
        {
            "events": [{"name": name, "time": float(t)} for name, t in log.events],
            "seed": int(log.seed),
            "status": log.status,
        },
        path,
    )


def outcome_row(log: MissionLog, index: int) -> dict:
    """Flat per-mission record: the unit of aggregation for summaries."""
    row = {
        "index": int(index),
        "label": log.label,
        "seed": int(log.seed),
        "status": log.status,
        "landed": log.outcome is not None,
        "gps_bias_true": [float(v) for v in log.gps_bias_true],
        "platform_offset": [float(v) for v in log.platform_offset],
        "steps": int(log.time.shape[0]),
        "final_time": float(log.time[-1]) if log.time.shape[0] else 0.0,
        "outcome": log.outcome,
        "bias_estimate_final": [float(v) for v in log.estimate_mean[-1][6:9]]
        if log.time.shape[0]
        else None,
    }
    return row


def write_outcome_json(row: dict, path) -> None:
    _dump_json(row, path)


def write_mission_artifacts(log: MissionLog, out_dir, index: int) -> dict:
    """Write trajectory.csv/events.json/outcome.json; returns the outcome row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(log, out_dir / "trajectory.csv")
    write_events_json(log, out_dir / "events.json")
    row = outcome_row(log, index)
    write_outcome_json(row, out_dir / "outcome.json")
    return row


def _ellipse(points: np.ndarray) -> dict:
    """Two-standard-deviation covariance ellipse of 2D scatter points."""
    if points.shape[0] < 2:
        center = points.mean(axis=0) if points.shape[0] else np.zeros(2)
        return {
            "center_x": float(center[0]),
            "center_y": float(center[1]),
            "semi_axis_major": 0.0,
            "semi_axis_minor": 0.0,
            "angle_rad": 0.0,
        }
    center = points.mean(axis=0)
    cov = np.cov(points.T, ddof=1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    major_vec = eigvecs[:, order[0]]
    return {
        "center_x": float(center[0]),
        "center_y": float(center[1]),
        "semi_axis_major": float(2.0 * math.sqrt(eigvals[0])),
        "semi_axis_minor": float(2.0 * math.sqrt(eigvals[1])),
        "angle_rad": float(math.atan2(major_vec[1], major_vec[0])),
    }


def build_summary(rows) -> dict:
    """Per-combination landing statistics from outcome rows.

    Hit rate counts non-landing missions as misses; distance statistics are
    over missions that produced a landing.
    """
    rows = sorted(rows, key=lambda r: r["index"])
    by_label: dict = {}
    for row in rows:
        by_label.setdefault(row["label"], []).append(row)

    combinations = {}
    for label, group in by_label.items():
        landed = [r for r in group if r["landed"]]
        hits = sum(1 for r in landed if r["outcome"]["hit"])
        distances = [r["outcome"]["distance_to_center"] for r in landed]
        est_errors = [r["outcome"]["estimate_error"] for r in landed]
        scatter = np.array(
            [[r["outcome"]["truth_position"][0], r["outcome"]["truth_position"][1]] for r in landed]
        ).reshape(-1, 2)
        combinations[label] = {
            "trials": len(group),
            "landed": len(landed),
            "hit_rate": float(hits) / len(group),
            "mean_distance_to_center": float(np.mean(distances)) if distances else None,
            "max_distance_to_center": float(np.max(distances)) if distances else None,
            "mean_truth_estimate_gap": float(np.mean(est_errors)) if est_errors else None,
            "landing_ellipse_2sigma": _ellipse(scatter),
        }
    return {
        "schema": 1,
        "units": "meters, radians, seconds",
        "combinations": combinations,
        "missions": rows,
    }


def write_summary_json(summary: dict, path) -> None:
    _dump_json(summary, path)


def write_landing_scatter_csv(rows, path) -> None:
    rows = sorted(rows, key=lambda r: r["index"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SCATTER_COLUMNS) + "\n")
        for row in rows:
            outcome = row["outcome"]
            landed = row["landed"]
            cells = [
                str(int(row["index"])),
                row["label"],
                str(int(row["seed"])),
                row["status"],
                str(int(landed)),
                str(int(outcome["hit"])) if landed else "0",
                _fmt(outcome["truth_position"][0]) if landed else "",
                _fmt(outcome["truth_position"][1]) if landed else "",
                _fmt(outcome["estimate_position"][0]) if landed else "",
                _fmt(outcome["estimate_position"][1]) if landed else "",
                _fmt(outcome["distance_to_center"]) if landed else "",
                _fmt(outcome["estimate_error"]) if landed else "",
            ]
            fh.write(",".join(cells) + "\n")


def load_outcome_rows(logs_dir) -> list:
    """Collect outcome.json rows under a directory (recursively)."""
    logs_dir = Path(logs_dir)
    if not logs_dir.is_dir():
        raise FileNotFoundError(f"{logs_dir} is not a directory")
    rows = []
    for path in sorted(logs_dir.rglob("outcome.json")):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                row = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"corrupt outcome file {path}: {exc}") from exc
        if not isinstance(row, dict) or "index" not in row:
            raise ValueError(f"corrupt outcome file {path}: missing mission index")
        rows.append(row)
    if not rows:
        raise ValueError(f"no outcome.json files found under {logs_dir}")
    return sorted(rows, key=lambda r: r["index"])
