"""Mission/batch configuration: schema, defaults, validation, builders.

One YAML file describes a mission (sections: mission, drone, path, field,
ekf, sensors, platform) and optionally a batch (section: batch).  Every
constant the underlying model needs but the study designs leave open (gains,
covariances, gates, field of view, lag) lives here with its default, so an
experiment file is a complete, diffable record of what ran.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import yaml

from . import ekf, simworld, uwb
from .frames import GeodeticPoint, PoseSE3, geodetic_to_local, make_inertial_frame
from .planner import PathParams, PlannerError

SENSOR_NAMES = simworld.SENSOR_NAMES


class ConfigError(ValueError):
    """Schema violation; ``problems`` lists the offending keys."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


DEFAULT_CONFIG: dict = {
    "mission": {
        "start": [0.0, 0.0, 0.0],
        "goal": [100.03, 0.0, 0.0],
        "dt": 0.02,
        "max_time": 900.0,
        "seed": 0,
        "landing": {"horizontal_threshold": 0.15, "height_threshold": 0.1},
        "covariance_trace_cap": 1.0e6,
    },
    "drone": {"tau": 0.3},
    "path": {
        "height": 45.0,
        "arc_radius": 6.0,
        "speeds": [2.0, 2.0, 4.0, 2.0, 1.5],
    },
    "field": {"convergence_gain": 1.0},
    "ekf": {
        "p0_diag": [4.0] * 3 + [0.01] * 3 + [4.0] * 3 + [1e-4] * 3,
        "qu_diag": [0.01] * 6,
        "qf_diag": [1e-6] * 6 + [1e-8] * 6,
        "r_sdk_pos": 4.0,
        "r_sdk_ang": 1e-4,
        "r_aruco_pos": 0.01,
        "r_aruco_rollpitch": 0.25,
        "r_aruco_yaw": 0.01,
        "r_uwb": 0.04,
        "chi2_confidence": 0.999,
        "aruco_height_gate": 30.0,
    },
    "sensors": {
        "enabled": ["sdk", "aruco_large", "aruco_small", "uwb"],
        "rates": {"sdk": 10.0, "aruco": 10.0, "uwb": 10.0},
        "gps_bias": "random",
        "gps_bias_sigma": 1.0,
        "gps_noise": {"position": 0.3, "angle": 0.01},
        "gyro_bias": [0.0, 0.0, 0.005],
        "input_noise": {"velocity": 0.1, "gyro": 0.1},
        "aruco": {
            "large_size": 0.8,
            "small_size": 0.09,
            "large_max_range": 45.0,
            "small_max_range": 8.0,
            "half_fov_deg": 40.0,
            "noise": {"position": 0.1, "yaw": 0.1, "rollpitch": 0.5},
        },
        "uwb": {
            "anchors": [
                [-0.5, -0.5, 0.0],
                [0.5, -0.5, 0.0],
                [0.5, 0.5, 0.0],
                [-0.5, 0.5, 0.0],
            ],
            "range_gate": 10.0,
            "range_noise": 0.02,
        },
    },
    "platform": {"extent": [1.0, 1.0], "offset": [0.0, 0.0, 0.0]},
    "batch": {
        "trials": 1,
        "root_seed": 0,
        "combinations": {"all": ["sdk", "aruco_large", "aruco_small", "uwb"]},
        "sweeps": {},
    },
}


def _merge(base: dict, override: dict, prefix: str, problems: list) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            problems.append(f"{path}: unknown key")
            continue
        if isinstance(base[key], dict) and key not in ("combinations", "sweeps"):
            if not isinstance(value, dict):
                problems.append(f"{path}: expected a mapping")
                continue
            out[key] = _merge(base[key], value, path + ".", problems)
        else:
            out[key] = copy.deepcopy(value)
    return out


def merged_config(overrides: Optional[dict] = None) -> dict:
    """Defaults deep-merged with ``overrides``; unknown keys are errors."""
    problems: list = []
    merged = _merge(DEFAULT_CONFIG, overrides or {}, "", problems)
    if problems:
        raise ConfigError(problems)
    return merged


def load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return merged_config(data)


def _check_number(cfg, section, key, problems, positive=False, minimum=None):
    value = cfg
    for part in (section + "." + key).split("."):
        value = value[part]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        problems.append(f"{section}.{key}: expected a number, got {value!r}")
        return None
    value = float(value)
    if positive and not value > 0.0:
        problems.append(f"{section}.{key}: must be positive, got {value}")
    if minimum is not None and value < minimum:
        problems.append(f"{section}.{key}: must be >= {minimum}, got {value}")
    return value


def _check_vector(node, name, length, problems):
    if not isinstance(node, (list, tuple)) or len(node) != length:
        problems.append(f"{name}: expected a list of {length} numbers, got {node!r}")
        return None
    try:
        return [float(v) for v in node]
    except (TypeError, ValueError):
        problems.append(f"{name}: expected numeric entries, got {node!r}")
        return None


def _resolve_point(node, name, problems):
    """A point is either [x, y, z] meters or a geodetic mapping."""
    if isinstance(node, dict):
        keys = set(node)
        expected = {"latitude_deg", "longitude_deg", "altitude_m"}
        if keys != expected:
            problems.append(f"{name}: geodetic point needs keys {sorted(expected)}")
            return None
        try:
            return GeodeticPoint(
                latitude=math.radians(float(node["latitude_deg"])),
                longitude=math.radians(float(node["longitude_deg"])),
                altitude=float(node["altitude_m"]),
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
            return None
    vec = _check_vector(node, name, 3, problems)
    return None if vec is None else np.array(vec)


def _mission_geometry(cfg, problems):
    """Start/goal -> (inertial start point, horizontal separation d)."""
    start = _resolve_point(cfg["mission"]["start"], "mission.start", problems)
    goal = _resolve_point(cfg["mission"]["goal"], "mission.goal", problems)
    if start is None or goal is None:
        return None, None
    if isinstance(start, GeodeticPoint) != isinstance(goal, GeodeticPoint):
        problems.append("mission.start/goal: both must be geodetic or both local")
        return None, None
    if isinstance(start, GeodeticPoint):
        p_start = np.zeros(3)
        p_goal = geodetic_to_local(goal, start)
    else:
        p_start, p_goal = start, goal
    try:
        frame = make_inertial_frame(p_start, p_goal)
    except ValueError as exc:
        problems.append(f"mission.start/goal: {exc}")
        return None, None
    start_inertial = frame.to_frame(p_start)
    return start_inertial, float(np.hypot(*(p_goal[:2] - p_start[:2])))


def _build_path_params(cfg, d, problems) -> Optional[PathParams]:
    speeds = _check_vector(cfg["path"]["speeds"], "path.speeds", 5, problems)
    height = _check_number(cfg, "path", "height", problems, positive=True)
    radius = _check_number(cfg, "path", "arc_radius", problems, positive=True)
    gain = _check_number(cfg, "field", "convergence_gain", problems, positive=True)
    if problems or speeds is None or d is None:
        return None
    try:
        return PathParams(
            height=height,
            arc_radius=radius,
            start_distance=d,
            speeds=tuple(speeds),
            convergence_gain=gain,
        )
    except PlannerError as exc:
        problems.append(f"path: {exc}")
        return None


def _build_noise(cfg, problems) -> Optional[ekf.NoiseConfig]:
    e = cfg["ekf"]
    p0 = _check_vector(e["p0_diag"], "ekf.p0_diag", 12, problems)
    qu = _check_vector(e["qu_diag"], "ekf.qu_diag", 6, problems)
    qf = _check_vector(e["qf_diag"], "ekf.qf_diag", 12, problems)
    for key in (
        "r_sdk_pos",
        "r_sdk_ang",
        "r_aruco_pos",
        "r_aruco_rollpitch",
        "r_aruco_yaw",
        "r_uwb",
        "aruco_height_gate",
    ):
        _check_number(cfg, "ekf", key, problems, positive=True)
    conf = _check_number(cfg, "ekf", "chi2_confidence", problems)
    if conf is not None and not 0.0 < conf < 1.0:
        problems.append(f"ekf.chi2_confidence: must be in (0, 1), got {conf}")
    if problems or p0 is None or qu is None or qf is None:
        return None
    return ekf.NoiseConfig(
        initial_covariance=np.diag(p0),
        input_covariance=np.diag(qu),
        model_covariance=np.diag(qf),
        r_sdk=np.diag([e["r_sdk_pos"]] * 3 + [e["r_sdk_ang"]] * 3),
        r_aruco=np.diag(
            [e["r_aruco_pos"]] * 3
            + [e["r_aruco_rollpitch"], e["r_aruco_rollpitch"], e["r_aruco_yaw"]]
        ),
        r_uwb=np.diag([e["r_uwb"]] * 3),
        chi2_confidence=float(conf),
        aruco_height_gate=float(e["aruco_height_gate"]),
    )


def _check_enabled(enabled, where, problems):
    if not isinstance(enabled, (list, tuple)):
        problems.append(f"{where}: expected a list of sensor names")
        return None
    unknown = [s for s in enabled if s not in SENSOR_NAMES]
    if unknown:
        problems.append(f"{where}: unknown sensors {unknown}; valid: {list(SENSOR_NAMES)}")
        return None
    if "sdk" not in enabled:
        problems.append(f"{where}: 'sdk' must always be enabled (always-available source)")
        return None
    return frozenset(enabled)


def _build_suite(cfg, noise, problems) -> Optional[simworld.SensorSuite]:
    s = cfg["sensors"]
    enabled = _check_enabled(s["enabled"], "sensors.enabled", problems)
    for key in ("sdk", "aruco", "uwb"):
        rate = s["rates"].get(key)
        dt = cfg["mission"]["dt"]
        if not isinstance(rate, (int, float)) or rate <= 0:
            problems.append(f"sensors.rates.{key}: expected a positive rate, got {rate!r}")
        elif isinstance(dt, (int, float)) and dt > 0:
            steps = 1.0 / (float(rate) * float(dt))
            if abs(steps - round(steps)) > 1e-9:
                problems.append(
                    f"sensors.rates.{key}: rate {rate} Hz must divide the sim rate "
                    f"{1.0 / float(dt):g} Hz"
                )
    bias_node = s["gps_bias"]
    gps_bias = None
    if bias_node != "random":
        vec = _check_vector(bias_node, "sensors.gps_bias", 3, problems)
        gps_bias = None if vec is None else np.array(vec)
    gyro = _check_vector(s["gyro_bias"], "sensors.gyro_bias", 3, problems)
    a = s["aruco"]
    for key in ("large_size", "small_size", "large_max_range", "small_max_range", "half_fov_deg"):
        _check_number(cfg, "sensors.aruco", key, problems, positive=True)
    anchors_node = s["uwb"]["anchors"]
    anchor_rows = []
    if not isinstance(anchors_node, (list, tuple)) or len(anchors_node) < 4:
        problems.append("sensors.uwb.anchors: need at least 4 anchor positions")
    else:
        for i, row in enumerate(anchors_node):
            vec = _check_vector(row, f"sensors.uwb.anchors[{i}]", 3, problems)
            if vec is not None:
                anchor_rows.append(vec)
    _check_number(cfg, "sensors.uwb", "range_gate", problems, positive=True)
    _check_number(cfg, "sensors.uwb", "range_noise", problems, minimum=0.0)
    offset = _check_vector(cfg["platform"]["offset"], "platform.offset", 3, problems)
    if problems or enabled is None or gyro is None or offset is None:
        return None
    try:
        anchors = uwb.AnchorSet(
            positions=np.array(anchor_rows), operating_radius=float(s["uwb"]["range_gate"])
        )
    except uwb.UwbError as exc:
        problems.append(f"sensors.uwb.anchors: {exc}")
        return None
    markers = (
        simworld.MarkerModel(simworld.LARGE_MARKER, float(a["large_size"]), float(a["large_max_range"])),
        simworld.MarkerModel(simworld.SMALL_MARKER, float(a["small_size"]), float(a["small_max_range"])),
    )
    return simworld.SensorSuite(
        enabled=enabled,
        rates={k: float(v) for k, v in s["rates"].items()},
        gps_bias=gps_bias,
        gps_bias_sigma=float(s["gps_bias_sigma"]),
        gyro_bias=np.array(gyro),
        gps_sigma_position=float(s["gps_noise"]["position"]),
        gps_sigma_angle=float(s["gps_noise"]["angle"]),
        input_sigma_velocity=float(s["input_noise"]["velocity"]),
        input_sigma_gyro=float(s["input_noise"]["gyro"]),
        markers=markers,
        half_fov=math.radians(float(a["half_fov_deg"])),
        aruco_sigma_position=float(a["noise"]["position"]),
        aruco_sigma_yaw=float(a["noise"]["yaw"]),
        aruco_sigma_rollpitch=float(a["noise"]["rollpitch"]),
        marker_poses=simworld.default_marker_poses(),
        anchors=anchors,
        uwb_range_sigma=float(s["uwb"]["range_noise"]),
        platform_offset=np.array(offset),
        r_sdk=noise.r_sdk,
        r_aruco=noise.r_aruco,
        r_uwb=noise.r_uwb,
    )


def build_mission(
    config: dict,
    seed: Optional[int] = None,
    label: str = "mission",
    enabled: Optional[frozenset] = None,
) -> simworld.MissionConfig:
    """Validate a merged config dict and build a runnable mission.

    ``seed`` and ``enabled`` override the file values (used by the batch
    runner).  Raises :class:`ConfigError` naming every offending key.
    """
    problems: list = []
    start_inertial, d = _mission_geometry(config, problems)
    params = _build_path_params(config, d, problems)
    noise = _build_noise(config, problems)
    suite = None
    if noise is not None:
        suite = _build_suite(config, noise, problems)

    dt = _check_number(config, "mission", "dt", problems, positive=True)
    if dt is not None and dt > 0.1:
        problems.append(f"mission.dt: must be in (0, 0.1], got {dt}")
    _check_number(config, "mission", "max_time", problems, positive=True)
    _check_number(config, "mission", "covariance_trace_cap", problems, positive=True)
    _check_number(config, "mission.landing", "horizontal_threshold", problems, positive=True)
    _check_number(config, "mission.landing", "height_threshold", problems, positive=True)
    _check_number(config, "drone", "tau", problems, minimum=0.0)
    extent = _check_vector(config["platform"]["extent"], "platform.extent", 2, problems)
    seed_value = config["mission"]["seed"] if seed is None else seed
    if not isinstance(seed_value, int) or isinstance(seed_value, bool):
        problems.append(f"mission.seed: expected an integer, got {seed_value!r}")

    if problems or params is None or noise is None or suite is None:
        raise ConfigError(problems or ["configuration could not be built"])

    if enabled is not None:
        suite = replace(suite, enabled=enabled)

    statics = ekf.CameraStatics(
        camera_in_drone=suite.camera_in_drone, markers=dict(suite.marker_poses)
    )
    return simworld.MissionConfig(
        params=params,
        noise=noise,
        suite=suite,
        statics=statics,
        start=start_inertial,
        dt=float(config["mission"]["dt"]),
        tau=float(config["drone"]["tau"]),
        max_time=float(config["mission"]["max_time"]),
        seed=int(seed_value),
        landing_horizontal=float(config["mission"]["landing"]["horizontal_threshold"]),
        landing_height=float(config["mission"]["landing"]["height_threshold"]),
        platform_extent=tuple(extent),
        covariance_trace_cap=float(config["mission"]["covariance_trace_cap"]),
        label=label,
    )


@dataclass(frozen=True)
class BatchSpec:
    """Expanded batch: one (index, label, mission) entry per run."""

    missions: tuple
    root_seed: int
    trials: int


def _set_dotted(cfg: dict, dotted: str, value, problems):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            problems.append(f"batch.sweeps.{dotted}: unknown key")
            return
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        problems.append(f"batch.sweeps.{dotted}: unknown key")
        return
    node[parts[-1]] = value


def build_batch(config: dict, seed: Optional[int] = None) -> BatchSpec:
    """Expand combinations x sweeps x trials into seeded missions.

    Mission seeds follow root_seed + mission index, with missions
    enumerated combination-major in file order.
    """
    problems: list = []
    batch = config["batch"]
    trials = batch["trials"]
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
        problems.append(f"batch.trials: expected an integer >= 1, got {trials!r}")
    root_seed = batch["root_seed"] if seed is None else seed
    if not isinstance(root_seed, int) or isinstance(root_seed, bool):
        problems.append(f"batch.root_seed: expected an integer, got {root_seed!r}")
    combos = batch["combinations"]
    if not isinstance(combos, dict) or not combos:
        problems.append("batch.combinations: expected a non-empty mapping")
        combos = {}
    combo_sets = {}
    for name, sensors in combos.items():
        enabled = _check_enabled(sensors, f"batch.combinations.{name}", problems)
        if enabled is not None:
            combo_sets[name] = enabled
    sweeps = batch["sweeps"]
    if not isinstance(sweeps, dict):
        problems.append("batch.sweeps: expected a mapping of dotted keys to value lists")
        sweeps = {}
    for key, values in sweeps.items():
        if not isinstance(values, (list, tuple)) or not values:
            problems.append(f"batch.sweeps.{key}: expected a non-empty list of values")
    if problems:
        raise ConfigError(problems)

    sweep_variants = [({}, "")]
    for key, values in sweeps.items():
        sweep_variants = [
            ({**assignment, key: v}, f"{suffix},{key}={v}" if suffix else f"{key}={v}")
            for assignment, suffix in sweep_variants
            for v in values
        ]

    missions = []
    index = 0
    for name, enabled in combo_sets.items():
        for assignment, suffix in sweep_variants:
            variant_cfg = copy.deepcopy(config)
            sweep_problems: list = []
            for dotted, value in assignment.items():
                _set_dotted(variant_cfg, dotted, value, sweep_problems)
            if sweep_problems:
                raise ConfigError(sweep_problems)
            label = f"{name}[{suffix}]" if suffix else name
            for _ in range(trials):
                mission = build_mission(
                    variant_cfg, seed=root_seed + index, label=label, enabled=enabled
                )
                missions.append((index, label, mission))
                index += 1
    return BatchSpec(missions=tuple(missions), root_seed=int(root_seed), trials=int(trials))
