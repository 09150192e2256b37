"""Collision checking for a rectangular vehicle footprint.

Two checker variants share one interface: the virtual checker tests the
exact footprint rectangle against simulated obstacle polygons, while the
mapped checker queries 16 points on the footprint boundary against occupied
cells of an occupancy grid. Edges (waypoint sequences) are checked by
discretizing at a fixed arc-length resolution and testing every sample.

Checkers are read-only over their world or grid and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .geometry import Pose2, wrap_angles
from .grid import HYSTERESIS, OccupancyGrid
from .sim import ObstacleWorld

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class VehicleFootprint:
    """Vehicle body rectangle.

    `ref_offset` is the vector from the rectangle center to the pose
    reference point along the vehicle x-axis; the default puts the reference
    at the rear-axle center of a 3.4 x 1.4 m body.
    """

    length: float = 3.4
    width: float = 1.4
    ref_offset: float = -1.2

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("footprint dimensions must be positive")

    def center_local(self) -> tuple[float, float]:
        """Rectangle center in the pose frame."""
        return (-self.ref_offset, 0.0)

    def local_corners(self) -> np.ndarray:
        """(4, 2) corners in the pose frame, counter-clockwise."""
        cx, cy = self.center_local()
        hl, hw = self.length / 2.0, self.width / 2.0
        return np.array([
            [cx + hl, cy + hw], [cx - hl, cy + hw],
            [cx - hl, cy - hw], [cx + hl, cy - hw],
        ])

    def local_boundary_points(self) -> np.ndarray:
        """(16, 2) boundary sample points in the pose frame.

        Four corners plus three evenly spaced interior stations on each of
        the four edges (quarter points), walked counter-clockwise.
        """
        corners = self.local_corners()
        pts = []
        for k in range(4):
            a = corners[k]
            b = corners[(k + 1) % 4]
            pts.append(a)
            for frac in (0.25, 0.5, 0.75):
                pts.append(a + frac * (b - a))
        return np.asarray(pts)


def footprint_points(pose: Pose2, fp: VehicleFootprint) -> np.ndarray:
    """The 16 boundary sample points in world frame, (16, 2)."""
    local = fp.local_boundary_points()
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    return np.column_stack([
        pose.x + c * local[:, 0] - s * local[:, 1],
        pose.y + s * local[:, 0] + c * local[:, 1],
    ])


def _transform_local(poses: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Place local points at each pose: (M, 3) x (K, 2) -> (M, K, 2)."""
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    x = poses[:, 0][:, None] + c * local[None, :, 0] - s * local[None, :, 1]
    y = poses[:, 1][:, None] + s * local[None, :, 0] + c * local[None, :, 1]
    return np.stack([x, y], axis=-1)


def discretize_edge(waypoints: np.ndarray, epsilon: float) -> np.ndarray:
    """Sample poses along a waypoint polyline at arc spacing <= epsilon.

    The station count per edge is the smallest power of two meeting the
    resolution, so refining epsilon only ever adds stations (a collision
    found at some resolution is found at every finer one). Headings are
    interpolated along the shorter rotation arc. Includes both endpoints.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.ndim != 2 or waypoints.shape[1] != 3 or len(waypoints) == 0:
        raise ValueError("waypoints must be a nonempty (N, 3) array")
    if len(waypoints) == 1:
        return waypoints.copy()
    chords = np.hypot(*np.diff(waypoints[:, :2], axis=0).T)
    total = float(chords.sum())
    if total <= 0.0:
        return waypoints[:1].copy()
    n_intervals = 1 << max(int(math.ceil(math.log2(total / epsilon))), 0)
    stations = np.linspace(0.0, total, n_intervals + 1)
    cum = np.concatenate([[0.0], np.cumsum(chords)])
    seg = np.clip(np.searchsorted(cum, stations, side="right") - 1, 0, len(chords) - 1)
    seg_len = np.where(chords[seg] > 0.0, chords[seg], 1.0)
    frac = np.clip((stations - cum[seg]) / seg_len, 0.0, 1.0)
    p0 = waypoints[seg]
    p1 = waypoints[seg + 1]
    out = np.empty((len(stations), 3))
    out[:, 0] = p0[:, 0] + frac * (p1[:, 0] - p0[:, 0])
    out[:, 1] = p0[:, 1] + frac * (p1[:, 1] - p0[:, 1])
    dpsi = wrap_angles(p1[:, 2] - p0[:, 2])
    out[:, 2] = wrap_angles(p0[:, 2] + frac * dpsi)
    return out


class VirtualCollisionChecker:
    """Exact rectangle-vs-polygon checker over simulated obstacles."""

    def __init__(self, world: ObstacleWorld, footprint: VehicleFootprint,
                 epsilon: float = DEFAULT_EPSILON):
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.world = world
        self.footprint = footprint
        self.epsilon = epsilon
        self._obstacles = unary_union([Polygon(v) for v in world.obstacles])
        shapely.prepare(self._obstacles)
        self._local_corners = footprint.local_corners()

    def poses_in_collision(self, poses: np.ndarray) -> np.ndarray:
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        if self._obstacles.is_empty:
            return np.zeros(len(poses), dtype=bool)
        corners = _transform_local(poses, self._local_corners)
        rings = np.concatenate([corners, corners[:, :1, :]], axis=1)
        rects = shapely.polygons(rings)
        return shapely.intersects(self._obstacles, rects)

    def config_in_collision(self, pose: Pose2) -> bool:
        return bool(self.poses_in_collision(pose.as_array()[None, :])[0])

    def edge_in_collision(self, waypoints: np.ndarray) -> bool:
        samples = discretize_edge(np.atleast_2d(waypoints), self.epsilon)
        return bool(self.poses_in_collision(samples).any())


class MappedCollisionChecker:
    """16-point footprint checker over an occupancy grid.

    Unknown cells count as free unless `strict_unknown` is set; any footprint
    point falling outside the grid extent counts as a collision.
    """

    def __init__(self, grid: OccupancyGrid, footprint: VehicleFootprint,
                 epsilon: float = DEFAULT_EPSILON, strict_unknown: bool = False):
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.grid = grid
        self.footprint = footprint
        self.epsilon = epsilon
        self.strict_unknown = strict_unknown
        self._local_points = footprint.local_boundary_points()

    def poses_in_collision(self, poses: np.ndarray) -> np.ndarray:
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        pts = _transform_local(poses, self._local_points).reshape(-1, 2)
        m, inside = self.grid.cell_values(pts)
        bad = ~inside | (m > 0.5 + HYSTERESIS)
        if self.strict_unknown:
            bad |= m >= 0.5 - HYSTERESIS
        return bad.reshape(len(poses), -1).any(axis=1)

    def config_in_collision(self, pose: Pose2) -> bool:
        return bool(self.poses_in_collision(pose.as_array()[None, :])[0])

    def edge_in_collision(self, waypoints: np.ndarray) -> bool:
        samples = discretize_edge(np.atleast_2d(waypoints), self.epsilon)
        return bool(self.poses_in_collision(samples).any())


CollisionChecker = VirtualCollisionChecker | MappedCollisionChecker


__all__ = [
    "VehicleFootprint", "footprint_points", "discretize_edge",
    "VirtualCollisionChecker", "MappedCollisionChecker", "CollisionChecker",
    "DEFAULT_EPSILON",
]
