"""Artificial-vector-field guidance over the sectioned path.

The commanded velocity blends a convergent component (down the gradient of
the quadratic surface error) with a tangential component (along the curve),
shaped so the speed always equals the sector reference speed.  A direction
switch flips the tangential sense for the return leg.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .planner import (
    PathParams,
    SingularGradientError,
    classify_sector,
    surface_gradients,
    surface_values,
)

DELIVERY = 1
RETURN = -1

ON_CURVE_V = 1e-12


@dataclass(frozen=True)
class FieldCommand:
    """Velocity command in the inertial frame plus the fixed yaw reference.

    ``singular`` marks a command that was frozen because the field could not
    be evaluated (arc-center gradient singularity).
    """

    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_reference: float = 0.0
    singular: bool = False

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).copy())


def lyapunov_value(p, params: PathParams) -> float:
    """V = (alpha1^2 + alpha2^2) / 2; zero exactly on the curve."""
    a1, a2, _ = surface_values(p, params)
    return 0.5 * (a1 * a1 + a2 * a2)


def shaping(v: float, k_f: float):
    """Blend weights (G, H): G = -(2/pi) atan(k_f sqrt(V)), H = sqrt(1 - G^2)."""
    g = -(2.0 / math.pi) * math.atan(k_f * math.sqrt(v))
    return g, math.sqrt(max(0.0, 1.0 - g * g))


def field_velocity(p, params: PathParams, direction: int = DELIVERY) -> FieldCommand:
    """Guidance velocity at a point.

    The output speed equals the sector reference speed; on the curve the
    command is purely tangential.  Raises
    :class:`~dronenav.planner.SingularGradientError` at arc centers.
    """
    if direction not in (DELIVERY, RETURN):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    a1, a2, sector = surface_values(p, params)
    grad1, grad2 = surface_gradients(p, params)
    v_ref = params.speeds[sector - 1]

    cross = np.array(
        [
            grad1[1] * grad2[2] - grad1[2] * grad2[1],
            grad1[2] * grad2[0] - grad1[0] * grad2[2],
            grad1[0] * grad2[1] - grad1[1] * grad2[0],
        ]
    )
    tang = direction * cross / np.linalg.norm(cross)

    lyap = 0.5 * (a1 * a1 + a2 * a2)
    if lyap < ON_CURVE_V:
        # G(0) = 0: the convergent term vanishes continuously; skip its 0/0.
        return FieldCommand(velocity=v_ref * tang)

    grad_v = a1 * grad1 + a2 * grad2
    conv = grad_v / np.linalg.norm(grad_v)
    g, h = shaping(lyap, params.convergence_gain)
    return FieldCommand(velocity=v_ref * (g * conv + h * tang))


class VectorField:
    """Stateful wrapper that freezes the last command across singular points.

    A singular evaluation (arc center) returns the previous valid command
    flagged ``singular=True`` instead of fabricating a direction; the
    singular set has measure zero and the closed loop never dwells there.
    """

    def __init__(self, params: PathParams):
        self.params = params
        self._last = FieldCommand(velocity=np.zeros(3))

    def command(self, p, direction: int = DELIVERY) -> FieldCommand:
        try:
            cmd = field_velocity(p, self.params, direction)
        except SingularGradientError:
            return replace(self._last, singular=True)
        self._last = cmd
        return cmd

    def sector(self, p) -> int:
        return classify_sector(p, self.params)
