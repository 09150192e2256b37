"""Planar rigid-body math: poses, point transforms, angle wrapping.

Everything here is a pure function over immutable value types, so the
module is safe to use from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval [-pi, pi).

    The half-open convention makes wrapping idempotent: wrap(pi) == -pi,
    and wrap(wrap(x)) == wrap(x) bit for bit.

    Args:
        theta: Angle in radians. Must be finite.

    Returns:
        Equivalent angle in [-pi, pi).
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # Float rounding in the modulo can land exactly on +pi for inputs
    # just below an odd multiple of pi; fold it back.
    if wrapped >= math.pi:
        wrapped = -math.pi
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle over an array of radians."""
    wrapped = (np.asarray(theta, dtype=float) + math.pi) % TWO_PI - math.pi
    return np.where(wrapped >= math.pi, -math.pi, wrapped)


@dataclass(frozen=True)
class Point2:
    """A point in the plane, meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x!r}, {self.y!r})")


@dataclass(frozen=True)
class Pose2:
    """A planar rigid transform / vehicle pose: position in meters, heading in radians.

    The heading is always stored wrapped to [-pi, pi).
    """

    x: float
    y: float
    psi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose position must be finite, got ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi], dtype=float)


def se2_apply(pose: Pose2, pt: Point2) -> Point2:
    """Map a point from the pose's local frame into the world frame.

    Applies the standard 2D rotation by pose.psi followed by translation:
    R(psi) * pt + (pose.x, pose.y).
    """
    c = math.cos(pose.psi)
    s = math.sin(pose.psi)
    return Point2(
        pose.x + c * pt.x - s * pt.y,
        pose.y + s * pt.x + c * pt.y,
    )


def se2_apply_many(pose: Pose2, pts: np.ndarray) -> np.ndarray:
    """Vectorized se2_apply over an (N, 2) array of local-frame points."""
    pts = np.asarray(pts, dtype=float)
    c = math.cos(pose.psi)
    s = math.sin(pose.psi)
    out = np.empty_like(pts)
    out[:, 0] = pose.x + c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = pose.y + s * pts[:, 0] + c * pts[:, 1]
    return out


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    """Compose two rigid transforms: the result maps b's frame through a.

    se2_apply(compose(a, b), p) == se2_apply(a, se2_apply(b, p)).
    """
    c = math.cos(a.psi)
    s = math.sin(a.psi)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.psi + b.psi,
    )


def se2_inverse(pose: Pose2) -> Pose2:
    """Inverse rigid transform: compose(pose, inverse(pose)) == identity."""
    c = math.cos(pose.psi)
    s = math.sin(pose.psi)
    return Pose2(-(c * pose.x + s * pose.y), -(-s * pose.x + c * pose.y), -pose.psi)


def se2_compose_poses(node: Pose2, rel: np.ndarray) -> np.ndarray:
    """Compose one pose with an (N, 3) array of [x, y, psi] relative poses.

    Returns an (N, 3) array of world-frame poses with headings wrapped.
    """
    rel = np.asarray(rel, dtype=float)
    c = math.cos(node.psi)
    s = math.sin(node.psi)
    out = np.empty_like(rel)
    out[:, 0] = node.x + c * rel[:, 0] - s * rel[:, 1]
    out[:, 1] = node.y + s * rel[:, 0] + c * rel[:, 1]
    out[:, 2] = wrap_angles(node.psi + rel[:, 2])
    return out
