"""Bias-augmented extended Kalman filter.

Twelve states: position, Euler orientation, a constant GPS-position bias
relative to the landing platform, and a constant gyro bias.  Prediction
integrates world-frame velocity and body-frame angular-rate inputs;
corrections fuse three measurement families:

* the flight-software pose (position biased once the platform has been
  observed, plus orientation);
* the marker pose in the camera frame, fused raw so the uncertain relative
  roll/pitch can carry their own large covariance entries;
* a position fix from UWB multilateration.

A binary latch enables the GPS bias term in the pose model the first time
any platform-local measurement (marker or UWB) is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Optional, Union

import numpy as np
from scipy.stats import chi2

from .frames import (
    EulerSingularityError,
    PoseSE3,
    euler_to_matrix,
    matrix_to_euler,
    wrap_angle,
)

STATE_DIM = 12
_POS = slice(0, 3)
_ANG = slice(3, 6)
_BIAS_P = slice(6, 9)
_BIAS_W = slice(9, 12)

GIMBAL_LOCK_MARGIN_RAD = 1e-3
JACOBIAN_STEP = 1e-6


class FilterError(RuntimeError):
    """Numerical failure inside the filter."""


class GimbalLockError(FilterError):
    """Pitch too close to +-pi/2 for the Euler-rate propagation."""


@dataclass
class FilterState:
    """Filter mean (12,), covariance (12, 12), bias latch, and filter time."""

    mean: np.ndarray
    covariance: np.ndarray
    bias_latched: bool = False
    time: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM).copy()
        self.covariance = (
            np.asarray(self.covariance, dtype=float).reshape(STATE_DIM, STATE_DIM).copy()
        )

    @property
    def position(self) -> np.ndarray:
        return self.mean[_POS]

    @property
    def euler(self) -> np.ndarray:
        return self.mean[_ANG]

    @property
    def gps_bias(self) -> np.ndarray:
        return self.mean[_BIAS_P]

    @property
    def gyro_bias(self) -> np.ndarray:
        return self.mean[_BIAS_W]

    def copy(self) -> "FilterState":
        return FilterState(self.mean, self.covariance, self.bias_latched, self.time)


@dataclass(frozen=True)
class InputVector:
    """World-frame velocity and body-frame angular velocity inputs."""

    velocity: np.ndarray
    angular_velocity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        w = np.asarray(self.angular_velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("input vector must be finite")
        object.__setattr__(self, "velocity", v.copy())
        object.__setattr__(self, "angular_velocity", w.copy())


@dataclass(frozen=True)
class SdkPose:
    """Flight-software pose: world position and Euler orientation."""

    position: np.ndarray
    euler: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class ArucoPose:
    """Marker pose in the camera frame, straight from the detector."""

    position: np.ndarray
    euler: np.ndarray
    marker_id: str
    covariance: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class UwbPosition:
    """World position from UWB multilateration."""

    position: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0


Measurement = Union[SdkPose, ArucoPose, UwbPosition]


@dataclass(frozen=True)
class CameraStatics:
    """Known-a-priori transforms for the marker measurement model.

    ``camera_in_drone`` is the camera mount pose in the drone body frame;
    ``markers`` maps marker id to its pose in the world frame.
    """

    camera_in_drone: PoseSE3
    markers: Mapping[str, PoseSE3]


@dataclass(frozen=True)
class NoiseConfig:
    """Filter covariances and gate settings (all config-overridable)."""

    initial_covariance: np.ndarray
    input_covariance: np.ndarray
    model_covariance: np.ndarray
    r_sdk: np.ndarray
    r_aruco: np.ndarray
    r_uwb: np.ndarray
    chi2_confidence: float = 0.999
    aruco_height_gate: float = 30.0

    @staticmethod
    def defaults() -> "NoiseConfig":
        return NoiseConfig(
            initial_covariance=np.diag([4.0] * 3 + [0.01] * 3 + [4.0] * 3 + [1e-4] * 3),
            input_covariance=np.diag([0.01] * 6),
            model_covariance=np.diag([1e-6] * 6 + [1e-8] * 6),
            r_sdk=np.diag([4.0] * 3 + [1e-4] * 3),
            r_aruco=np.diag([0.01] * 3 + [0.25, 0.25, 0.01]),
            r_uwb=np.diag([0.04] * 3),
        )


@dataclass(frozen=True)
class CorrectionResult:
    state: FilterState
    accepted: bool
    reason: Optional[str] = None
    mahalanobis_sq: Optional[float] = None


def euler_rate_matrix(roll: float, pitch: float) -> np.ndarray:
    """Matrix mapping body angular velocity to Euler-angle rates (Z-Y-X)."""
    if abs(pitch) >= math.pi / 2.0 - GIMBAL_LOCK_MARGIN_RAD:
        raise GimbalLockError(
            f"pitch {pitch:.4f} rad within {GIMBAL_LOCK_MARGIN_RAD} of +-pi/2"
        )
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp = math.tan(pitch), math.cos(pitch)
    return np.array(
        [
            [1.0, sr * tp, cr * tp],
            [0.0, cr, -sr],
            [0.0, sr / cp, cr / cp],
        ]
    )


def prediction_jacobians(state: FilterState, u: InputVector, dt: float):
    """Analytic Jacobians (F = df/dx, G = df/du) of the propagation model."""
    roll, pitch = float(state.mean[3]), float(state.mean[4])
    jr = euler_rate_matrix(roll, pitch)
    omega = u.angular_velocity - state.gyro_bias
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp = math.tan(pitch), math.cos(pitch)
    sp = math.sin(pitch)
    w1, w2 = float(omega[1]), float(omega[2])

    # d(Jr @ omega)/d(roll, pitch); the yaw column is zero.
    d_roll = np.array(
        [
            cr * tp * w1 - sr * tp * w2,
            -sr * w1 - cr * w2,
            (cr * w1 - sr * w2) / cp,
        ]
    )
    d_pitch = np.array(
        [
            (sr * w1 + cr * w2) / (cp * cp),
            0.0,
            (sr * w1 + cr * w2) * sp / (cp * cp),
        ]
    )

    f_jac = np.eye(STATE_DIM)
    f_jac[3:6, 3] += dt * d_roll
    f_jac[3:6, 4] += dt * d_pitch
    f_jac[3:6, 9:12] = -dt * jr

    g_jac = np.zeros((STATE_DIM, 6))
    g_jac[0:3, 0:3] = dt * np.eye(3)
    g_jac[3:6, 3:6] = dt * jr
    return f_jac, g_jac


def propagate_mean(mean: np.ndarray, u: InputVector, dt: float) -> np.ndarray:
    """Constant-bias propagation of the state mean."""
    jr = euler_rate_matrix(float(mean[3]), float(mean[4]))
    out = mean.copy()
    out[_POS] = mean[_POS] + u.velocity * dt
    out[_ANG] = wrap_angle(mean[_ANG] + jr @ (u.angular_velocity - mean[_BIAS_W]) * dt)
    return out


def ekf_predict(
    state: FilterState, u: InputVector, dt: float, noise: NoiseConfig
) -> FilterState:
    """Prediction step; ``dt = 0`` is a no-op."""
    if dt < 0.0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0.0:
        return state.copy()
    f_jac, g_jac = prediction_jacobians(state, u, dt)
    mean = propagate_mean(state.mean, u, dt)
    cov = (
        f_jac @ state.covariance @ f_jac.T
        + g_jac @ noise.input_covariance @ g_jac.T
        + noise.model_covariance
    )
    cov = 0.5 * (cov + cov.T)
    return FilterState(mean, cov, state.bias_latched, state.time + dt)


def _rigid_inverse(rot: np.ndarray, trans: np.ndarray):
    rt = rot.T
    return rt, -(rt @ trans)


def _rigid_product(rot_a, trans_a, rot_b, trans_b):
    return rot_a @ rot_b, rot_a @ trans_b + trans_a


def _aruco_expectation_fn(statics: CameraStatics, marker_id: str):
    """Closure computing the expected marker-in-camera pose from a mean vector."""
    if marker_id not in statics.markers:
        raise KeyError(f"unknown marker id {marker_id!r}")
    cam = statics.camera_in_drone
    r_ci, t_ci = _rigid_inverse(cam.rotation(), cam.position)
    marker = statics.markers[marker_id]
    r_m, t_m = marker.rotation(), marker.position

    def expectation(mean: np.ndarray) -> np.ndarray:
        r_dw = euler_to_matrix(mean[3], mean[4], mean[5])
        r_wd, t_wd = _rigid_inverse(r_dw, mean[_POS])
        r_b, t_b = _rigid_product(r_wd, t_wd, r_m, t_m)
        r_a, t_a = _rigid_product(r_ci, t_ci, r_b, t_b)
        return np.concatenate([t_a, matrix_to_euler(r_a)])

    return expectation


def _numeric_jacobian(expectation, mean: np.ndarray, angle_mask: np.ndarray) -> np.ndarray:
    dim = expectation(mean).shape[0]
    jac = np.zeros((dim, STATE_DIM))
    for j in range(STATE_DIM):
        plus = mean.copy()
        minus = mean.copy()
        plus[j] += JACOBIAN_STEP
        minus[j] -= JACOBIAN_STEP
        diff = expectation(plus) - expectation(minus)
        diff[angle_mask] = wrap_angle(diff[angle_mask])
        jac[:, j] = diff / (2.0 * JACOBIAN_STEP)
    return jac


def measurement_model(
    state: FilterState, m: Measurement, statics: Optional[CameraStatics] = None
):
    """Expected measurement, Jacobian, and angle-component mask for ``m``.

    Jacobians are central finite differences on the state: the marker model
    composes rigid-transform inverses and an Euler extraction whose analytic
    Jacobian is unwieldy; the pose/position models reduce to the exact
    selection matrices anyway.
    """
    if isinstance(m, SdkPose):
        latched = state.bias_latched

        def expectation(mean):
            pos = mean[_POS] + mean[_BIAS_P] if latched else mean[_POS]
            return np.concatenate([pos, mean[_ANG]])

        angle_mask = np.array([False] * 3 + [True] * 3)
    elif isinstance(m, ArucoPose):
        if statics is None:
            raise ValueError("marker measurement requires camera/marker statics")
        expectation = _aruco_expectation_fn(statics, m.marker_id)
        angle_mask = np.array([False] * 3 + [True] * 3)
    elif isinstance(m, UwbPosition):

        def expectation(mean):
            return mean[_POS].copy()

        angle_mask = np.array([False] * 3)
    else:
        raise TypeError(f"unknown measurement type {type(m).__name__}")

    expected = expectation(state.mean)
    jac = _numeric_jacobian(expectation, state.mean, angle_mask)
    return expected, jac, angle_mask


@lru_cache(maxsize=None)
def _chi2_threshold(confidence: float, dim: int) -> float:
    return float(chi2.ppf(confidence, dim))


def _measurement_vector(m: Measurement) -> np.ndarray:
    if isinstance(m, SdkPose):
        return np.concatenate([np.asarray(m.position, float), np.asarray(m.euler, float)])
    if isinstance(m, ArucoPose):
        return np.concatenate([np.asarray(m.position, float), np.asarray(m.euler, float)])
    return np.asarray(m.position, dtype=float).copy()


def ekf_correct(
    state: FilterState,
    m: Measurement,
    noise: NoiseConfig,
    statics: Optional[CameraStatics] = None,
) -> CorrectionResult:
    """Correction step with chi-square innovation gating.

    Rejections (stale timestamp, marker seen from above the height gate,
    gate failure) leave the state untouched.  The first accepted local
    measurement (marker or UWB) latches the GPS-bias term on.

    Before the latch, the position estimate tracks the biased GPS frame, so
    when the first platform-local fix arrives the covariance is reanchored
    (``e_p <- e_p - e_b``, i.e. ``P <- T P T^T`` with an identity T carrying
    ``-I`` in the position/bias block): the platform-relative position
    inherits the bias prior uncertainty and a position/bias cross term.
    Without this, the first fix widens nothing, the still-biased innovations
    fail the gate, and the bias the latch exists to reveal is never
    absorbed.  The reanchoring is committed only if the fix passes the gate.
    """
    if m.timestamp < state.time - 1e-9:
        return CorrectionResult(state, False, reason="stale")
    is_local = isinstance(m, (ArucoPose, UwbPosition))
    if isinstance(m, ArucoPose) and state.mean[2] >= noise.aruco_height_gate:
        return CorrectionResult(state, False, reason="height_gate")

    r_cov = np.asarray(m.covariance, dtype=float)
    try:
        np.linalg.cholesky(r_cov)
    except np.linalg.LinAlgError as exc:
        raise FilterError("measurement covariance is not positive definite") from exc

    # EulerSingularityError from the marker model propagates to the caller.
    expected, h_jac, angle_mask = measurement_model(state, m, statics)

    innovation = _measurement_vector(m) - expected
    innovation[angle_mask] = wrap_angle(innovation[angle_mask])

    cov = state.covariance
    if is_local and not state.bias_latched:
        # Provisional reanchoring: committed only if the fix is accepted.
        t_mat = np.eye(STATE_DIM)
        t_mat[_POS, _BIAS_P] = -np.eye(3)
        cov = t_mat @ cov @ t_mat.T
    s_mat = h_jac @ cov @ h_jac.T + r_cov

    try:
        maha_sq = float(innovation @ np.linalg.solve(s_mat, innovation))
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is singular") from exc
    if maha_sq > _chi2_threshold(noise.chi2_confidence, innovation.shape[0]):
        return CorrectionResult(state, False, reason="chi2_gate", mahalanobis_sq=maha_sq)

    try:
        gain = np.linalg.solve(s_mat, h_jac @ cov).T
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is singular") from exc

    mean = state.mean + gain @ innovation
    mean[_ANG] = wrap_angle(mean[_ANG])
    new_cov = (np.eye(STATE_DIM) - gain @ h_jac) @ cov
    new_cov = 0.5 * (new_cov + new_cov.T)
    latched = state.bias_latched or is_local
    new_state = FilterState(mean, new_cov, latched, state.time)
    return CorrectionResult(new_state, True, mahalanobis_sq=maha_sq)


def default_initial_state(
    position, euler=(0.0, 0.0, 0.0), noise: Optional[NoiseConfig] = None
) -> FilterState:
    """Fresh filter state with zero biases and the configured prior."""
    noise = noise or NoiseConfig.defaults()
    mean = np.zeros(STATE_DIM)
    mean[_POS] = np.asarray(position, dtype=float)
    mean[_ANG] = np.asarray(euler, dtype=float)
    return FilterState(mean, noise.initial_covariance)
