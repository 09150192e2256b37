"""Gauss-Newton scan-to-map alignment.

Refines a pose estimate by minimizing the squared mismatch between a scan's
endpoint occupancy values and fully-occupied map cells: sum_i [1 - M(S_i)]^2,
where S_i are the world-frame endpoints of the scan at the candidate pose.
Stateless over (grid, scan, initial pose); concurrent matches against a
read-only grid are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Point2, Pose2, wrap_angle
from .grid import OccupancyGrid
from .sim import LidarScan

DEFAULT_MAX_ITERS = 30
DEFAULT_TOL = 1e-4
MIN_CONTRIBUTING_BEAMS = 3


@dataclass(frozen=True)
class MatchResult:
    """Outcome of a scan match: refined pose, iterations spent, final
    residual sum, and whether the iteration converged."""

    pose: Pose2
    iterations: int
    residual: float
    converged: bool


def jacobian_row(psi: float, s: Point2) -> np.ndarray:
    """Derivative of a world-frame scan endpoint w.r.t. (x, y, psi).

    Rows are the endpoint's (x, y); columns the pose parameters. The
    translation block is identity and the heading column is the rotated
    endpoint's tangent vector.
    """
    sin_p = math.sin(psi)
    cos_p = math.cos(psi)
    return np.array([
        [1.0, 0.0, -sin_p * s.x - cos_p * s.y],
        [0.0, 1.0, cos_p * s.x - sin_p * s.y],
    ])


def _endpoint_terms(grid: OccupancyGrid, points: np.ndarray, xi: Pose2):
    """World endpoints, occupancy values, gradients and the contributing-beam
    mask (in-map with nonzero gradient) for sensor-frame points at pose xi."""
    c = math.cos(xi.psi)
    s = math.sin(xi.psi)
    world = np.column_stack([
        xi.x + c * points[:, 0] - s * points[:, 1],
        xi.y + s * points[:, 0] + c * points[:, 1],
    ])
    values, inside = grid.interpolate(world)
    grads, _ = grid.gradients(world)
    contributing = inside & ((grads[:, 0] != 0.0) | (grads[:, 1] != 0.0))
    return world, values, grads, inside, contributing


def residual_sum(grid: OccupancyGrid, points: np.ndarray, xi: Pose2) -> tuple[float, int]:
    """Sum of [1 - M]^2 over in-map endpoints, plus the in-map beam count."""
    _, values, _, inside, _ = _endpoint_terms(grid, points, xi)
    r = 1.0 - values[inside]
    return float(np.dot(r, r)), int(inside.sum())


def gauss_newton_step(grid: OccupancyGrid, scan: LidarScan, xi: Pose2) -> np.ndarray | None:
    """One Gauss-Newton pose update from the normal equations.

    Accumulates J_i = grad M(S_i) . dS_i/dxi over beams whose endpoints are
    in-map with nonzero gradient, solves (H + lambda I) d = sum J_i^T (1 - M_i)
    with lambda = 1e-9 tr(H)/3, and returns the 3-vector update, or None when
    fewer than three beams contribute or the system is not solvable.
    """
    points = scan.points()
    if len(points) == 0:
        return None
    _, values, grads, _, contributing = _endpoint_terms(grid, points, xi)
    if int(contributing.sum()) < MIN_CONTRIBUTING_BEAMS:
        return None

    pts = points[contributing]
    g = grads[contributing]
    m = values[contributing]
    sin_p = math.sin(xi.psi)
    cos_p = math.cos(xi.psi)
    dpsi = np.column_stack([
        -sin_p * pts[:, 0] - cos_p * pts[:, 1],
        cos_p * pts[:, 0] - sin_p * pts[:, 1],
    ])
    # Rows of grad M . dS/dxi, shape (n, 3).
    jg = np.column_stack([g[:, 0], g[:, 1], np.einsum("ij,ij->i", g, dpsi)])
    h = jg.T @ jg
    rhs = jg.T @ (1.0 - m)
    h_reg = h + np.eye(3) * (1e-9 * np.trace(h) / 3.0)
    try:
        delta = np.linalg.solve(h_reg, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(delta)):
        return None
    return delta


def match_scan(
    grid: OccupancyGrid,
    scan: LidarScan,
    xi0: Pose2,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    backtrack: bool = True,
) -> MatchResult:
    """Iterate Gauss-Newton updates until the step norm drops below tol.

    The step norm weighs meters and radians 1:1. When backtracking is on, a
    step that raises the residual is halved up to five times and rejected if
    it still does not improve; the best-residual iterate is returned either
    way. A scan with no usable beams yields converged=False at xi0.
    """
    points = scan.points()
    if len(points) == 0:
        return MatchResult(pose=xi0, iterations=0, residual=math.inf, converged=False)

    xi = xi0
    best_pose = xi0
    best_residual, in_map = residual_sum(grid, points, xi0)
    if in_map == 0:
        return MatchResult(pose=xi0, iterations=0, residual=math.inf, converged=False)

    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        delta = gauss_newton_step(grid, scan, xi)
        if delta is None:
            break
        accepted = None
        if backtrack:
            scale = 1.0
            for _ in range(6):
                candidate = Pose2(xi.x + scale * delta[0], xi.y + scale * delta[1],
                                  wrap_angle(xi.psi + scale * delta[2]))
                cand_residual, cand_in_map = residual_sum(grid, points, candidate)
                if cand_in_map > 0 and cand_residual <= best_residual:
                    accepted = (candidate, cand_residual, scale)
                    break
                scale *= 0.5
            if accepted is None:
                break
            xi, res, scale = accepted
            step_norm = scale * float(np.linalg.norm(delta))
        else:
            xi = Pose2(xi.x + delta[0], xi.y + delta[1], wrap_angle(xi.psi + delta[2]))
            res, _ = residual_sum(grid, points, xi)
            step_norm = float(np.linalg.norm(delta))
        if res <= best_residual:
            best_residual = res
            best_pose = xi
        if step_norm < tol:
            converged = True
            break

    return MatchResult(pose=best_pose, iterations=iterations,
                       residual=best_residual, converged=converged)


__all__ = [
    "MatchResult", "jacobian_row", "gauss_newton_step", "match_scan",
    "residual_sum", "DEFAULT_MAX_ITERS", "DEFAULT_TOL",
]
