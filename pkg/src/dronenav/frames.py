"""Coordinate frames: flat-earth geodetic conversion, the mission inertial
frame, and SE(3) pose algebra.

Conventions used throughout the package:

* world axes are east-north-up (z up), units are meters / radians / seconds;
* Euler angles are (roll, pitch, yaw), composed Z-Y-X body-to-world,
  i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``;
* the mission inertial frame puts the delivery point at the origin with +x
  pointing from the start toward the delivery point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6378137.0  # WGS-84 equatorial radius
FLAT_EARTH_MAX_SEPARATION_RAD = 0.01
PITCH_SINGULARITY_MARGIN_RAD = 1e-3


class FrameError(ValueError):
    """Domain violation in a frame construction or conversion."""


class FlatEarthDomainError(FrameError):
    """Point too far from the reference for the flat-earth approximation."""


class DegenerateHeadingError(FrameError):
    """Start directly above goal: the frame heading is undefined."""


class EulerSingularityError(FrameError):
    """Pitch too close to +-pi/2 for a well-defined Euler extraction."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to (-pi, pi].

    Values already in range pass through bit-exactly.
    """
    arr = np.asarray(angle, dtype=float)
    wrapped = -(np.mod(-arr + np.pi, 2.0 * np.pi) - np.pi)
    out = np.where((arr > -np.pi) & (arr <= np.pi), arr, wrapped)
    if out.ndim == 0:
        return float(out)
    return out


def _as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GeodeticPoint:
    """Geodetic coordinates in radians, altitude in meters."""

    latitude: float
    longitude: float
    altitude: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise FrameError(f"latitude {self.latitude} outside [-pi/2, pi/2]")
        if not -math.pi < self.longitude <= math.pi:
            raise FrameError(f"longitude {self.longitude} outside (-pi, pi]")


def geodetic_to_local(p: GeodeticPoint, ref: GeodeticPoint) -> np.ndarray:
    """Flat-earth east-north-up offset of ``p`` from ``ref``, in meters.

    Equirectangular projection about ``ref``; valid only for small angular
    separations (guarded at ``FLAT_EARTH_MAX_SEPARATION_RAD``).
    """
    dlat = p.latitude - ref.latitude
    dlon = wrap_angle(p.longitude - ref.longitude)
    cos_ref = math.cos(ref.latitude)
    separation = math.hypot(dlat, dlon * cos_ref)
    if separation >= FLAT_EARTH_MAX_SEPARATION_RAD:
        raise FlatEarthDomainError(
            f"angular separation {separation:.4f} rad exceeds the flat-earth "
            f"validity bound {FLAT_EARTH_MAX_SEPARATION_RAD} rad"
        )
    return np.array(
        [
            EARTH_RADIUS_M * dlon * cos_ref,
            EARTH_RADIUS_M * dlat,
            p.altitude - ref.altitude,
        ]
    )


def local_to_geodetic(enu, ref: GeodeticPoint) -> GeodeticPoint:
    """Inverse of :func:`geodetic_to_local` under the same reference."""
    enu = _as_vec3(enu)
    cos_ref = math.cos(ref.latitude)
    if cos_ref <= 0.0:
        raise FlatEarthDomainError("reference at a pole: longitude offset undefined")
    return GeodeticPoint(
        latitude=ref.latitude + enu[1] / EARTH_RADIUS_M,
        longitude=wrap_angle(ref.longitude + enu[0] / (EARTH_RADIUS_M * cos_ref)),
        altitude=ref.altitude + enu[2],
    )


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix for Z-Y-X Euler angles (body-to-world)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_euler(rot: np.ndarray) -> np.ndarray:
    """Z-Y-X Euler angles (roll, pitch, yaw) of a rotation matrix.

    Raises :class:`EulerSingularityError` when the pitch is within
    ``PITCH_SINGULARITY_MARGIN_RAD`` of +-pi/2.
    """
    sp = -float(rot[2, 0])
    sp = min(1.0, max(-1.0, sp))
    if abs(sp) > math.cos(PITCH_SINGULARITY_MARGIN_RAD):
        raise EulerSingularityError(
            "pitch within 1e-3 rad of +-pi/2: Euler extraction is singular"
        )
    pitch = math.asin(sp)
    roll = math.atan2(rot[2, 1], rot[2, 2])
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    return np.array([roll, pitch, yaw])


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: position plus (roll, pitch, yaw) orientation.

    ``matrix()`` gives the equivalent 4x4 homogeneous transform mapping
    child-frame coordinates into the parent frame.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position).copy())
        object.__setattr__(self, "euler", _as_vec3(self.euler).copy())

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.zeros(3), np.zeros(3))

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(*self.euler)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation()
        mat[:3, 3] = self.position
        return mat

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "PoseSE3":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (4, 4):
            raise FrameError(f"expected a 4x4 homogeneous matrix, got {mat.shape}")
        return PoseSE3(mat[:3, 3], matrix_to_euler(mat[:3, :3]))

    def apply(self, point) -> np.ndarray:
        """Map a point from the child frame into the parent frame."""
        return self.rotation() @ _as_vec3(point) + self.position


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Compose transforms: the result maps through ``b`` and then ``a``."""
    ra = a.rotation()
    rot = ra @ b.rotation()
    return PoseSE3(ra @ b.position + a.position, matrix_to_euler(rot))


def invert(a: PoseSE3) -> PoseSE3:
    rt = a.rotation().T
    return PoseSE3(-(rt @ a.position), matrix_to_euler(rt))


@dataclass(frozen=True)
class InertialFrame:
    """Mission frame: delivery point at the origin, +x toward it from start.

    ``origin`` and ``yaw_rotation`` are expressed in the earth-local frame.
    """

    origin: np.ndarray
    yaw_rotation: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin).copy())

    def to_frame(self, point) -> np.ndarray:
        """Earth-local point -> inertial-frame coordinates."""
        d = _as_vec3(point) - self.origin
        c, s = math.cos(self.yaw_rotation), math.sin(self.yaw_rotation)
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    def from_frame(self, point) -> np.ndarray:
        """Inertial-frame point -> earth-local coordinates."""
        p = _as_vec3(point)
        c, s = math.cos(self.yaw_rotation), math.sin(self.yaw_rotation)
        return self.origin + np.array([c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])


def make_inertial_frame(p_start, p_final) -> InertialFrame:
    """Build the mission frame from start/final points in earth-local coords.

    The final point maps to the origin and the start maps to (-d, 0, dz)
    with d the horizontal start-final separation.
    """
    p_start = _as_vec3(p_start)
    p_final = _as_vec3(p_final)
    heading = p_final[:2] - p_start[:2]
    if float(np.hypot(*heading)) <= 0.0:
        raise DegenerateHeadingError(
            "start is directly above/below the delivery point: heading undefined"
        )
    return InertialFrame(
        origin=p_final, yaw_rotation=math.atan2(heading[1], heading[0])
    )
