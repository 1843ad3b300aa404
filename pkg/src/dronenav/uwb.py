"""UWB TDoA forward model and multilateration solver.

The tag observes the range to a designated base anchor plus range
differences to every other anchor.  Position is recovered by Gauss-Newton
least squares on those range equations; for (near-)coplanar anchor layouts
the mirror ambiguity is resolved to the half-space above the anchor plane
(the drone is always above the pad).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class UwbError(ValueError):
    """Invalid anchor geometry or sample."""


class NoFixError(RuntimeError):
    """Multilateration failed to converge."""


@dataclass(frozen=True)
class AnchorSet:
    """Anchor positions (first row is the base anchor) and signal speed.

    At least four anchors are required and they must not be collinear.
    ``operating_radius`` is the tag-to-base range beyond which the devices
    stop reporting.
    """

    positions: np.ndarray
    speed: float = SPEED_OF_LIGHT
    operating_radius: float = 10.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise UwbError(f"anchor positions must be (N, 3), got {pos.shape}")
        if pos.shape[0] < 4:
            raise UwbError(f"need N >= 4 anchors, got {pos.shape[0]}")
        centered = pos - pos.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise UwbError("anchors are collinear: geometry is degenerate")
        if not self.speed > 0.0:
            raise UwbError(f"signal speed must be positive, got {self.speed}")
        if not self.operating_radius > 0.0:
            raise UwbError(f"operating radius must be positive, got {self.operating_radius}")
        object.__setattr__(self, "positions", pos.copy())

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def plane(self):
        """Best-fit anchor plane as (centroid, unit normal with n_z >= 0)."""
        centroid = self.positions.mean(axis=0)
        _, _, vt = np.linalg.svd(self.positions - centroid)
        normal = vt[2]
        if normal[2] < 0.0:
            normal = -normal
        return centroid, normal


@dataclass(frozen=True)
class TdoaSample:
    """Base range d_1 plus range differences d_i1 for anchors i = 2..N."""

    base_range: float
    range_diffs: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "range_diffs", np.asarray(self.range_diffs, dtype=float).copy()
        )


def tdoa_forward(tag, anchors: AnchorSet):
    """Noise-free TDoA observables for a tag position.

    Returns ``None`` when the tag is outside the operating radius of the
    base anchor (models real dropout).
    """
    tag = np.asarray(tag, dtype=float)
    ranges = np.linalg.norm(anchors.positions - tag, axis=1)
    if ranges[0] > anchors.operating_radius:
        return None
    return TdoaSample(base_range=float(ranges[0]), range_diffs=ranges[1:] - ranges[0])


@dataclass(frozen=True)
class MultilaterationResult:
    position: np.ndarray
    residual: float
    iterations: int
    residual_history: tuple
    mirror_ambiguous: bool

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).copy())


def _equation_errors(x, anchors: AnchorSet, sample: TdoaSample) -> np.ndarray:
    ranges = np.linalg.norm(anchors.positions - x, axis=1)
    return np.concatenate(
        [[ranges[0] - sample.base_range], (ranges[1:] - ranges[0]) - sample.range_diffs]
    )


def _rms(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err * err)))


def _gauss_newton(x0, anchors: AnchorSet, sample: TdoaSample, max_iterations: int):
    """One Gauss-Newton descent with step halving; returns (x, rms_history, iters)."""
    x = np.asarray(x0, dtype=float).copy()
    err = _equation_errors(x, anchors, sample)
    history = [_rms(err)]
    for iteration in range(1, max_iterations + 1):
        diffs = x - anchors.positions
        ranges = np.linalg.norm(diffs, axis=1)
        ranges = np.maximum(ranges, 1e-12)
        units = diffs / ranges[:, None]
        jac = np.vstack([units[0], units[1:] - units[0]])
        step, *_ = np.linalg.lstsq(jac, -err, rcond=None)
        alpha = 1.0
        improved = False
        for _ in range(30):
            trial = x + alpha * step
            trial_err = _equation_errors(trial, anchors, sample)
            if _rms(trial_err) <= history[-1]:
                x, err = trial, trial_err
                history.append(_rms(trial_err))
                improved = True
                break
            alpha *= 0.5
        if not improved:
            # No descent direction left: stationary point reached.
            return x, history, iteration
        if alpha * float(np.linalg.norm(step)) < 1e-10:
            return x, history, iteration
    raise NoFixError(f"multilateration did not converge in {max_iterations} iterations")


def multilaterate(
    sample: TdoaSample, anchors: AnchorSet, max_iterations: int = 50
) -> MultilaterationResult:
    """Solve the tag position from a TDoA sample.

    Gauss-Newton on the base-range and range-difference equations, started
    at the anchor centroid raised 1 m above the anchor plane.  If the
    solution falls below the anchor plane it is mirrored above (landing
    geometry); ``mirror_ambiguous`` flags the case where the mirrored
    solution fits nearly as well (inherent to coplanar layouts).
    """
    if sample.range_diffs.shape != (anchors.count - 1,):
        raise UwbError(
            f"sample has {sample.range_diffs.shape[0]} range differences for "
            f"{anchors.count} anchors"
        )
    if not np.all(np.isfinite(sample.range_diffs)) or not np.isfinite(sample.base_range):
        raise UwbError("sample contains non-finite values")

    centroid, normal = anchors.plane()
    x, history, iters = _gauss_newton(
        centroid + normal, anchors, sample, max_iterations
    )

    elevation = float(normal @ (x - centroid))
    if elevation < 0.0:
        mirrored = x - 2.0 * elevation * normal
        x2, hist2, it2 = _gauss_newton(mirrored, anchors, sample, max_iterations)
        if float(normal @ (x2 - centroid)) >= 0.0:
            x, history, iters = x2, history + hist2, iters + it2
        elif _rms(_equation_errors(mirrored, anchors, sample)) <= history[-1] * 1.5 + 1e-9:
            # Exact-mirror layout: the reflection itself is optimal.
            x = mirrored
            history = history + [_rms(_equation_errors(mirrored, anchors, sample))]

    residual = _rms(_equation_errors(x, anchors, sample))
    mirror = x - 2.0 * float(normal @ (x - centroid)) * normal
    mirror_residual = _rms(_equation_errors(mirror, anchors, sample))
    ambiguous = mirror_residual <= 1.1 * residual + 1e-9
    return MultilaterationResult(
        position=x,
        residual=residual,
        iterations=iters,
        residual_history=tuple(history),
        mirror_ambiguous=ambiguous,
    )
