"""Sectioned delivery-path geometry.

Space is split into five sectors, each owning one piece of the path
(vertical climb, quarter arc, cruise line, quarter arc, vertical descent).
Two scalar surfaces are defined per sector; their joint zero set is the
planned curve.  All coordinates are in the mission inertial frame: the
platform at the origin, the start at x = -d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ARC_CENTER_TOLERANCE = 1e-9


class PlannerError(ValueError):
    """Invalid path parameters."""


class SingularGradientError(ArithmeticError):
    """Surface gradient requested exactly at an arc center."""


@dataclass(frozen=True)
class PathParams:
    """Path geometry and per-sector reference speeds.

    height: cruise altitude h (m); arc_radius: transition-arc radius r (m);
    start_distance: horizontal start-to-platform separation d (m); speeds:
    reference speed per sector (m/s); convergence_gain: field convergence
    weight (dimensionless).
    """

    height: float
    arc_radius: float
    start_distance: float
    speeds: tuple = (2.0, 2.0, 4.0, 2.0, 1.5)
    convergence_gain: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.height > self.arc_radius > 0.0:
            problems.append(
                f"require height > arc_radius > 0, got h={self.height}, r={self.arc_radius}"
            )
        if self.start_distance < 2.0 * self.arc_radius:
            problems.append(
                f"require start_distance >= 2*arc_radius (non-overlapping arcs), "
                f"got d={self.start_distance}, r={self.arc_radius}"
            )
        speeds = tuple(float(v) for v in self.speeds)
        object.__setattr__(self, "speeds", speeds)
        if len(speeds) != 5:
            problems.append(f"speeds must have 5 entries, got {len(speeds)}")
        elif any(v <= 0.0 for v in speeds):
            problems.append(f"speeds must all be positive, got {speeds}")
        if not self.convergence_gain > 0.0:
            problems.append(f"convergence_gain must be positive, got {self.convergence_gain}")
        if problems:
            raise PlannerError("invalid PathParams: " + "; ".join(problems))

    @property
    def arc_centers(self) -> tuple:
        """(x, z) of the two arc centers."""
        zc = self.height - self.arc_radius
        return (
            (-self.start_distance + self.arc_radius, zc),
            (-self.arc_radius, zc),
        )


def classify_sector(p, params: PathParams) -> int:
    """Sector index (1..5) of a point; total over R^3.

    Boundary ties use the printed inequality strictness: the z <= h - r
    half-space belongs to sectors 1/5, and x = -d + r, x = -r belong to
    sector 3.
    """
    x, _, z = p
    h, r, d = params.height, params.arc_radius, params.start_distance
    if z <= h - r:
        return 1 if x <= -d / 2.0 else 5
    if x < -d + r:
        return 2
    if x <= -r:
        return 3
    return 4


def _alpha2_in_sector(p, sector: int, params: PathParams) -> float:
    """Second surface value using a specific sector's formula."""
    x, _, z = p
    h, r, d = params.height, params.arc_radius, params.start_distance
    if sector == 1:
        return -x - d
    if sector == 2:
        return math.hypot(x + d - r, z - h + r) - r
    if sector == 3:
        return z - h
    if sector == 4:
        return math.hypot(x + r, z - h + r) - r
    if sector == 5:
        return x
    raise ValueError(f"sector must be 1..5, got {sector}")


def surface_values(p, params: PathParams):
    """(alpha1, alpha2, sector) at a point.

    alpha1 = y; alpha2 is the sector-wise distance surface.  Both are zero
    exactly on the planned curve.
    """
    sector = classify_sector(p, params)
    return float(p[1]), _alpha2_in_sector(p, sector, params), sector


def surface_gradients(p, params: PathParams):
    """Analytic gradients (grad_alpha1, grad_alpha2) at a point.

    Raises :class:`SingularGradientError` at the arc centers, where the arc
    surface has no defined gradient direction.
    """
    x, _, z = p
    for cx, cz in params.arc_centers:
        if math.hypot(x - cx, z - cz) < ARC_CENTER_TOLERANCE:
            raise SingularGradientError(
                f"surface gradient undefined at arc center ({cx}, {cz})"
            )
    sector = classify_sector(p, params)
    grad1 = np.array([0.0, 1.0, 0.0])
    if sector == 1:
        grad2 = np.array([-1.0, 0.0, 0.0])
    elif sector == 3:
        grad2 = np.array([0.0, 0.0, 1.0])
    elif sector == 5:
        grad2 = np.array([1.0, 0.0, 0.0])
    else:
        cx, cz = params.arc_centers[0 if sector == 2 else 1]
        rho = math.hypot(x - cx, z - cz)
        grad2 = np.array([(x - cx) / rho, 0.0, (z - cz) / rho])
    return grad1, grad2


def path_curve(params: PathParams, points_per_section: int = 200) -> np.ndarray:
    """Sample the planned curve (start -> platform) section by section.

    Returns an (N, 3) array of on-curve points: useful for plots and for
    checking the zero set of the surfaces.
    """
    h, r, d = params.height, params.arc_radius, params.start_distance
    n = points_per_section
    climb_z = np.linspace(0.0, h - r, n)
    seg1 = np.column_stack([-d * np.ones(n), np.zeros(n), climb_z])
    t1 = np.linspace(np.pi, np.pi / 2.0, n)
    seg2 = np.column_stack(
        [(-d + r) + r * np.cos(t1), np.zeros(n), (h - r) + r * np.sin(t1)]
    )
    cruise_x = np.linspace(-d + r, -r, n)
    seg3 = np.column_stack([cruise_x, np.zeros(n), h * np.ones(n)])
    t2 = np.linspace(np.pi / 2.0, 0.0, n)
    seg4 = np.column_stack([-r + r * np.cos(t2), np.zeros(n), (h - r) + r * np.sin(t2)])
    descent_z = np.linspace(h - r, 0.0, n)
    seg5 = np.column_stack([np.zeros(n), np.zeros(n), descent_z])
    return np.vstack([seg1, seg2, seg3, seg4, seg5])
