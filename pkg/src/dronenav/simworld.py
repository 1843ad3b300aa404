"""Closed-loop mission simulation.

Ground truth is a kinematic drone with first-order velocity tracking.  The
sensor simulators emit a biased flight-software pose, marker poses in the
camera frame (dual marker, range/field-of-view gated), and UWB positions
from the TDoA pipeline.  The mission executor runs the delivery and return
legs against the guidance field and the bias-augmented filter, producing a
deterministic per-step log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ekf, uwb
from .frames import EulerSingularityError, PoseSE3, matrix_to_euler, wrap_angle
from .planner import PathParams, classify_sector
from .vectorfield import DELIVERY, RETURN, FieldCommand, VectorField, lyapunov_value

SENSOR_NAMES = ("sdk", "aruco_large", "aruco_small", "uwb")
LARGE_MARKER = "large"
SMALL_MARKER = "small"

# Mission phases
_PHASE_DELIVERY = "delivery"
_PHASE_RELEASE = "release"
_PHASE_RETURN = "return"


@dataclass
class TruthState:
    """Ground-truth kinematic state in the inertial frame."""

    position: np.ndarray
    velocity: np.ndarray
    euler: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3).copy()
        self.euler = np.asarray(self.euler, dtype=float).reshape(3).copy()


def step_drone(truth: TruthState, cmd: FieldCommand, dt: float, tau: float = 0.3) -> TruthState:
    """Advance truth one step under first-order velocity tracking.

    The velocity relaxes toward the command with time constant ``tau``
    (exact zero-order-hold discretization, so the response is independent
    of the step subdivision); ``tau = 0`` is the pure integrator.  Yaw
    tracks the yaw reference with the same lag.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if tau <= 0.0:
        velocity = np.asarray(cmd.velocity, dtype=float).copy()
        yaw = cmd.yaw_reference
    else:
        gain = 1.0 - math.exp(-dt / tau)
        velocity = truth.velocity + gain * (cmd.velocity - truth.velocity)
        yaw = truth.euler[2] + gain * wrap_angle(cmd.yaw_reference - truth.euler[2])
    position = truth.position + velocity * dt
    euler = np.array([truth.euler[0], truth.euler[1], wrap_angle(yaw)])
    return TruthState(position, velocity, euler, truth.time + dt)


@dataclass(frozen=True)
class MarkerModel:
    """One printed marker: its id, side length, and detection range."""

    marker_id: str
    size: float
    max_range: float


@dataclass(frozen=True)
class SensorSuite:
    """Everything the sensor simulators need, including true-world offsets.

    ``gps_bias`` of ``None`` means "draw per mission" (zero-mean Gaussian,
    ``gps_bias_sigma`` per axis).  ``platform_offset`` displaces the true
    marker and anchor poses while the filter keeps the nominal ones.
    """

    enabled: frozenset = frozenset(SENSOR_NAMES)
    rates: dict = field(default_factory=lambda: {"sdk": 10.0, "aruco": 10.0, "uwb": 10.0})
    gps_bias: Optional[np.ndarray] = None
    gps_bias_sigma: float = 1.0
    gyro_bias: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.005]))
    gps_sigma_position: float = 0.3
    gps_sigma_angle: float = 0.01
    input_sigma_velocity: float = 0.1
    input_sigma_gyro: float = 0.1
    markers: tuple = (
        MarkerModel(LARGE_MARKER, 0.8, 45.0),
        MarkerModel(SMALL_MARKER, 0.09, 8.0),
    )
    half_fov: float = math.radians(40.0)
    aruco_sigma_position: float = 0.1
    aruco_sigma_yaw: float = 0.1
    aruco_sigma_rollpitch: float = 0.5
    camera_in_drone: PoseSE3 = field(
        default_factory=lambda: PoseSE3(np.zeros(3), np.array([math.pi, 0.0, 0.0]))
    )
    marker_poses: dict = field(default_factory=dict)  # nominal marker poses, world frame
    anchors: Optional[uwb.AnchorSet] = None
    anchors_true: Optional[uwb.AnchorSet] = None  # displaced layout; derived when None
    uwb_range_sigma: float = 0.02
    platform_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_sdk: np.ndarray = field(default_factory=lambda: ekf.NoiseConfig.defaults().r_sdk)
    r_aruco: np.ndarray = field(default_factory=lambda: ekf.NoiseConfig.defaults().r_aruco)
    r_uwb: np.ndarray = field(default_factory=lambda: ekf.NoiseConfig.defaults().r_uwb)


def default_marker_poses() -> dict:
    """Both markers nested at the platform center, flat, zero yaw."""
    flat = PoseSE3(np.zeros(3), np.zeros(3))
    return {LARGE_MARKER: flat, SMALL_MARKER: flat}


def default_anchor_set() -> uwb.AnchorSet:
    """Four anchors on the corners of the 1x1 m pad."""
    corners = np.array(
        [
            [-0.5, -0.5, 0.0],
            [0.5, -0.5, 0.0],
            [0.5, 0.5, 0.0],
            [-0.5, 0.5, 0.0],
        ]
    )
    return uwb.AnchorSet(positions=corners)


def _due(t: float, dt: float, rate: float) -> bool:
    period = int(round(1.0 / (rate * dt)))
    return int(round(t / dt)) % max(1, period) == 0


def _marker_in_camera(truth: TruthState, suite: SensorSuite, marker_pose: PoseSE3):
    """True marker pose in the camera frame as (position, rotation)."""
    cam = suite.camera_in_drone
    r_cd, t_cd = cam.rotation(), cam.position
    r_dw = ekf.euler_to_matrix(*truth.euler)
    # (H_c^d)^-1 (H_d^w)^-1 H_a^w
    r_wm, t_wm = marker_pose.rotation(), marker_pose.position
    r_dm = r_dw.T @ r_wm
    t_dm = r_dw.T @ (t_wm - truth.position)
    r_cm = r_cd.T @ r_dm
    t_cm = r_cd.T @ (t_dm - t_cd)
    return t_cm, r_cm


def _marker_visible(position_cam: np.ndarray, marker: MarkerModel, half_fov: float) -> bool:
    """Detection gate: in front, within range, whole marker inside the cone."""
    depth = position_cam[2]
    if depth <= 0.0:
        return False
    dist = float(np.linalg.norm(position_cam))
    if dist > marker.max_range:
        return False
    center_angle = math.atan2(math.hypot(position_cam[0], position_cam[1]), depth)
    apparent = math.atan2(marker.size * math.sqrt(2.0) / 2.0, dist)
    return center_angle + apparent <= half_fov


def sense(truth: TruthState, suite: SensorSuite, t: float, rng, dt: float):
    """Measurements due at time ``t`` (absence models dropout).

    The flight-software pose is truth plus the GPS bias and noise.  Marker
    poses are exact rigid compositions against the *true* (possibly
    displaced) marker poses, perturbed with the configured sigmas.  UWB
    positions run the full TDoA forward model and multilateration against
    the *nominal* anchor layout.
    """
    out = []
    bias = suite.gps_bias if suite.gps_bias is not None else np.zeros(3)

    if "sdk" in suite.enabled and _due(t, dt, suite.rates["sdk"]):
        pos = truth.position + bias + rng.normal(0.0, suite.gps_sigma_position, 3)
        euler = wrap_angle(truth.euler + rng.normal(0.0, suite.gps_sigma_angle, 3))
        out.append(ekf.SdkPose(pos, euler, suite.r_sdk, timestamp=t))

    aruco_due = _due(t, dt, suite.rates["aruco"])
    for marker in suite.markers:
        name = f"aruco_{marker.marker_id}"
        if name not in suite.enabled or not aruco_due:
            continue
        nominal = suite.marker_poses[marker.marker_id]
        true_pose = PoseSE3(nominal.position + suite.platform_offset, nominal.euler)
        pos_cam, rot_cam = _marker_in_camera(truth, suite, true_pose)
        if not _marker_visible(pos_cam, marker, suite.half_fov):
            continue
        try:
            euler_cam = matrix_to_euler(rot_cam)
        except EulerSingularityError:
            continue  # detector output would be unstable here; drop the frame
        noisy_pos = pos_cam + rng.normal(0.0, suite.aruco_sigma_position, 3)
        angle_noise = np.array(
            [
                rng.normal(0.0, suite.aruco_sigma_rollpitch),
                rng.normal(0.0, suite.aruco_sigma_rollpitch),
                rng.normal(0.0, suite.aruco_sigma_yaw),
            ]
        )
        noisy_euler = wrap_angle(euler_cam + angle_noise)
        out.append(
            ekf.ArucoPose(noisy_pos, noisy_euler, marker.marker_id, suite.r_aruco, timestamp=t)
        )

    if "uwb" in suite.enabled and _due(t, dt, suite.rates["uwb"]):
        true_anchors = suite.anchors_true
        if true_anchors is None:
            true_anchors = replace(
                suite.anchors, positions=suite.anchors.positions + suite.platform_offset
            )
        sample = uwb.tdoa_forward(truth.position, true_anchors)
        if sample is not None:
            noisy = uwb.TdoaSample(
                base_range=sample.base_range + rng.normal(0.0, suite.uwb_range_sigma),
                range_diffs=sample.range_diffs
                + rng.normal(0.0, suite.uwb_range_sigma, sample.range_diffs.shape),
                timestamp=t,
            )
            try:
                fix = uwb.multilaterate(noisy, suite.anchors)
            except uwb.NoFixError:
                fix = None
            if fix is not None:
                out.append(ekf.UwbPosition(fix.position, suite.r_uwb, timestamp=t))
    return out


@dataclass
class MissionConfig:
    """Fully-resolved inputs for one mission run (inertial-frame geometry)."""

    params: PathParams
    noise: ekf.NoiseConfig
    suite: SensorSuite
    statics: ekf.CameraStatics
    start: np.ndarray  # inertial-frame start point (-d, 0, z_s)
    dt: float = 0.02
    tau: float = 0.3
    max_time: float = 900.0
    seed: int = 0
    landing_horizontal: float = 0.15
    landing_height: float = 0.1
    platform_extent: tuple = (1.0, 1.0)
    covariance_trace_cap: float = 1e6
    label: str = "mission"

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3).copy()
        if not 0.0 < self.dt <= 0.1:
            raise ValueError(f"dt must be in (0, 0.1], got {self.dt}")


@dataclass
class MissionLog:
    """Per-step arrays, ordered events, and the landing outcome."""

    time: np.ndarray
    truth_position: np.ndarray
    truth_euler: np.ndarray
    estimate_mean: np.ndarray
    covariance_diag: np.ndarray
    sector: np.ndarray
    lyapunov: np.ndarray
    command: np.ndarray
    bias_latched: np.ndarray
    measurements_applied: np.ndarray  # (N, 4) counts per sensor, SENSOR_NAMES order
    measurements_rejected: np.ndarray
    events: list
    outcome: Optional[dict]
    status: str
    seed: int
    label: str
    gps_bias_true: np.ndarray
    platform_offset: np.ndarray

    def event_time(self, name: str) -> Optional[float]:
        for event, t in self.events:
            if event == name:
                return t
        return None


def _input_measurement(prev: TruthState, truth: TruthState, suite: SensorSuite, rng, dt):
    """Velocity/gyro input as the flight software would report it."""
    velocity = (truth.position - prev.position) / dt
    euler_rate = wrap_angle(truth.euler - prev.euler) / dt
    jr = ekf.euler_rate_matrix(float(prev.euler[0]), float(prev.euler[1]))
    body_rate = np.linalg.solve(jr, euler_rate)
    u_v = velocity + rng.normal(0.0, suite.input_sigma_velocity, 3)
    u_w = body_rate + suite.gyro_bias + rng.normal(0.0, suite.input_sigma_gyro, 3)
    return ekf.InputVector(u_v, u_w)


def run_mission(config: MissionConfig) -> MissionLog:
    """Execute the delivery-and-return mission once, deterministically.

    The loop per step: command from the field at the estimated position,
    advance truth, predict with the sensed input, correct with whatever
    measurements are due, log.  The delivery leg ends when the estimate
    satisfies the landing thresholds or the drone physically touches the
    ground while descending; release and takeoff are stamped on the two
    following steps, then the return leg runs with the direction switch
    reversed.
    """
    rng = np.random.default_rng(config.seed)
    suite = config.suite
    if suite.gps_bias is None:
        suite = replace(suite, gps_bias=rng.normal(0.0, suite.gps_bias_sigma, 3))
    if suite.anchors_true is None:
        suite = replace(
            suite,
            anchors_true=replace(
                suite.anchors, positions=suite.anchors.positions + suite.platform_offset
            ),
        )

    field_ctl = VectorField(config.params)
    truth = TruthState(config.start.copy(), np.zeros(3), np.zeros(3), 0.0)
    state = ekf.FilterState(
        mean=np.concatenate([config.start + suite.gps_bias, np.zeros(9)]),
        covariance=config.noise.initial_covariance,
    )

    rows_time, rows_tpos, rows_teuler = [], [], []
    rows_mean, rows_cov, rows_sector, rows_v = [], [], [], []
    rows_cmd, rows_xi, rows_applied, rows_rejected = [], [], [], []
    events: list = []
    outcome: Optional[dict] = None
    status = "timeout"
    phase = _PHASE_DELIVERY
    hold_steps = 0
    direction = DELIVERY
    start_xy = config.start[:2]
    start_z = float(config.start[2])
    platform_xy = suite.platform_offset[:2]

    max_steps = int(math.ceil(config.max_time / config.dt))
    for k in range(max_steps):
        est_pos = state.position
        if phase == _PHASE_RELEASE:
            cmd = FieldCommand(velocity=np.zeros(3))
        else:
            cmd = field_ctl.command(est_pos, direction)
        sector = classify_sector(est_pos, config.params)

        prev = truth
        truth = step_drone(truth, cmd, config.dt, config.tau)
        if truth.position[2] < 0.0:
            truth.position[2] = 0.0
            truth.velocity[2] = max(0.0, truth.velocity[2])
        t = truth.time

        u = _input_measurement(prev, truth, suite, rng, config.dt)
        state = ekf.ekf_predict(state, u, config.dt, config.noise)

        applied = [0, 0, 0, 0]
        rejected = 0
        was_latched = state.bias_latched
        for m in sense(truth, suite, t, rng, config.dt):
            try:
                result = ekf.ekf_correct(state, m, config.noise, config.statics)
            except EulerSingularityError:
                rejected += 1
                continue
            state = result.state
            if result.accepted:
                applied[SENSOR_NAMES.index(_sensor_name(m))] += 1
            else:
                rejected += 1
        if state.bias_latched and not was_latched:
            events.append(("platform_detected", t))

        rows_time.append(t)
        rows_tpos.append(truth.position.copy())
        rows_teuler.append(truth.euler.copy())
        rows_mean.append(state.mean.copy())
        rows_cov.append(np.diag(state.covariance).copy())
        rows_sector.append(sector)
        rows_v.append(lyapunov_value(est_pos, config.params))
        rows_cmd.append(cmd.velocity.copy())
        rows_xi.append(int(state.bias_latched))
        rows_applied.append(applied)
        rows_rejected.append(rejected)

        if float(np.trace(state.covariance)) > config.covariance_trace_cap:
            status = "aborted"
            break

        est = state.position
        if phase == _PHASE_DELIVERY:
            threshold_met = (
                math.hypot(est[0], est[1]) < config.landing_horizontal
                and est[2] < config.landing_height
            )
            touched_down = truth.position[2] <= 0.0 and cmd.velocity[2] < 0.0
            if threshold_met or touched_down:
                events.append(("landed", t))
                outcome = _landing_outcome(truth, state, suite, config, t)
                phase = _PHASE_RELEASE
                hold_steps = 0
        elif phase == _PHASE_RELEASE:
            hold_steps += 1
            if hold_steps == 1:
                events.append(("released", t))
            elif hold_steps == 2:
                events.append(("tookoff", t))
                phase = _PHASE_RETURN
                direction = RETURN
        else:
            back_threshold = (
                math.hypot(est[0] - start_xy[0], est[1] - start_xy[1])
                < config.landing_horizontal
                and est[2] < start_z + config.landing_height
            )
            back_touch = truth.position[2] <= start_z and cmd.velocity[2] < 0.0
            if back_threshold or back_touch:
                events.append(("finished", t))
                status = "finished"
                break

    return MissionLog(
        time=np.array(rows_time),
        truth_position=np.array(rows_tpos),
        truth_euler=np.array(rows_teuler),
        estimate_mean=np.array(rows_mean),
        covariance_diag=np.array(rows_cov),
        sector=np.array(rows_sector, dtype=int),
        lyapunov=np.array(rows_v),
        command=np.array(rows_cmd),
        bias_latched=np.array(rows_xi, dtype=int),
        measurements_applied=np.array(rows_applied, dtype=int),
        measurements_rejected=np.array(rows_rejected, dtype=int),
        events=events,
        outcome=outcome,
        status=status,
        seed=config.seed,
        label=config.label,
        gps_bias_true=np.asarray(suite.gps_bias, dtype=float).copy(),
        platform_offset=np.asarray(suite.platform_offset, dtype=float).copy(),
    )


def _sensor_name(m) -> str:
    if isinstance(m, ekf.SdkPose):
        return "sdk"
    if isinstance(m, ekf.ArucoPose):
        return f"aruco_{m.marker_id}"
    return "uwb"


def _landing_outcome(truth, state, suite, config, t) -> dict:
    center = suite.platform_offset[:2]
    d_truth = math.hypot(truth.position[0] - center[0], truth.position[1] - center[1])
    ext_x, ext_y = config.platform_extent
    hit = (
        abs(truth.position[0] - center[0]) <= ext_x / 2.0
        and abs(truth.position[1] - center[1]) <= ext_y / 2.0
    )
    est = state.position
    return {
        "time": float(t),
        "truth_position": [float(v) for v in truth.position],
        "estimate_position": [float(v) for v in est],
        "distance_to_center": float(d_truth),
        "estimate_error": float(
            math.hypot(truth.position[0] - est[0], truth.position[1] - est[1])
        ),
        "hit": bool(hit),
        "bias_estimate": [float(v) for v in state.gps_bias],
    }
