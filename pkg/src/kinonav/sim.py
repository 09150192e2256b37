"""Stand-in for the physical world and vehicle.

Provides polygonal obstacle worlds, a ray-cast 2D LiDAR producing synthetic
scans, and a kinematic bicycle plant driven through the same four control
channels as the real drive-by-wire stack: acceleration, brake, steering
command, and gear.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
import shapely
import yaml
from shapely.geometry import Polygon

from .geometry import Point2, Pose2, wrap_angle


# ---------------------------------------------------------------------------
# Obstacle world and LiDAR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObstacleWorld:
    """A bounded planar world populated with simple polygonal obstacles.

    Immutable after construction and safe to share across threads.

    Attributes:
        obstacles: List of (K, 2) vertex arrays, one simple polygon each, meters.
        bounds: Axis-aligned (xmin, ymin, xmax, ymax) rectangle, meters.
    """

    obstacles: tuple[np.ndarray, ...]
    bounds: tuple[float, float, float, float]
    _edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"degenerate bounds {self.bounds}")
        polys = []
        for verts in self.obstacles:
            verts = np.asarray(verts, dtype=float)
            if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
                raise ValueError("each obstacle needs at least 3 (x, y) vertices")
            poly = Polygon(verts)
            if not poly.is_valid:
                raise ValueError("obstacle polygon is self-intersecting or degenerate")
            if (verts[:, 0].min() < xmin or verts[:, 0].max() > xmax
                    or verts[:, 1].min() < ymin or verts[:, 1].max() > ymax):
                raise ValueError("obstacle vertices must lie within world bounds")
            polys.append(verts)
        object.__setattr__(self, "obstacles", tuple(polys))
        # Flatten all polygon edges into (E, 2, 2) for vectorized ray casts.
        edges = []
        for verts in self.obstacles:
            closed = np.vstack([verts, verts[:1]])
            for i in range(len(verts)):
                edges.append((closed[i], closed[i + 1]))
        object.__setattr__(
            self, "_edges",
            np.asarray(edges, dtype=float) if edges else np.zeros((0, 2, 2)),
        )

    def contains(self, p: Point2) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p.x <= xmax and ymin <= p.y <= ymax

    def shapely_obstacles(self) -> list[Polygon]:
        return [Polygon(v) for v in self.obstacles]


@dataclass(frozen=True)
class LidarScan:
    """One sweep of a 2D LiDAR in the sensor frame.

    Beams with no return within max_range carry NaN in `ranges`; returned
    beams satisfy 0 < range <= max_range.
    """

    angles: np.ndarray
    ranges: np.ndarray
    max_range: float

    def returned_mask(self) -> np.ndarray:
        return np.isfinite(self.ranges)

    def points(self) -> np.ndarray:
        """Sensor-frame endpoints of the returned beams, (N, 2)."""
        mask = self.returned_mask()
        r = self.ranges[mask]
        a = self.angles[mask]
        return np.column_stack([r * np.cos(a), r * np.sin(a)])

    def __len__(self) -> int:
        return len(self.angles)


def _ray_edge_hits(edges: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Distances along one ray to each edge of (E, 2, 2), inf where no hit."""
    if len(edges) == 0:
        return np.full(0, np.inf)
    p = edges[:, 0, :]
    d_seg = edges[:, 1, :] - p
    # Solve origin + t*direction = p + u*d_seg via 2x2 cross products.
    denom = direction[0] * d_seg[:, 1] - direction[1] * d_seg[:, 0]
    rel = p - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0] * d_seg[:, 1] - rel[:, 1] * d_seg[:, 0]) / denom
        u = (rel[:, 0] * direction[1] - rel[:, 1] * direction[0]) / denom
    valid = (np.abs(denom) > 1e-15) & (u >= 0.0) & (u <= 1.0) & (t >= 0.0)
    return np.where(valid, t, np.inf)


def ray_cast(world: ObstacleWorld, origin: Point2, bearing: float, max_range: float) -> float | None:
    """Distance from origin to the nearest obstacle edge along a bearing.

    Args:
        world: Obstacle world; origin must lie inside its bounds.
        origin: Ray origin in world coordinates.
        bearing: World-frame ray direction, radians.
        max_range: Hits farther than this are discarded.

    Returns:
        Distance in meters to the closest intersected polygon edge, or None
        if no edge is hit within max_range.
    """
    if not world.contains(origin):
        raise ValueError(f"ray origin {origin} outside world bounds {world.bounds}")
    direction = np.array([math.cos(bearing), math.sin(bearing)])
    t = _ray_edge_hits(world._edges, np.array([origin.x, origin.y]), direction)
    best = t.min(initial=np.inf)
    if best <= max_range:
        return float(best)
    return None


def scan_world(
    world: ObstacleWorld,
    sensor_pose: Pose2,
    n_beams: int,
    fov: float,
    max_range: float,
    range_noise_sigma: float = 0.0,
    rng: random.Random | None = None,
) -> LidarScan:
    """Simulate one LiDAR sweep from a sensor pose.

    Beams are evenly spaced over `fov` (full-circle sweeps omit the duplicate
    closing beam). Gaussian range jitter is off by default; when enabled an
    explicit rng must be supplied so scans stay reproducible.
    """
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    if range_noise_sigma > 0.0 and rng is None:
        raise ValueError("range noise requires an explicit rng")
    if n_beams == 1:
        angles = np.array([0.0])
    elif fov >= 2.0 * math.pi - 1e-12:
        angles = -math.pi + np.arange(n_beams) * (2.0 * math.pi / n_beams)
    else:
        angles = np.linspace(-fov / 2.0, fov / 2.0, n_beams)

    origin = np.array([sensor_pose.x, sensor_pose.y])
    if not world.contains(Point2(sensor_pose.x, sensor_pose.y)):
        raise ValueError(f"sensor pose {sensor_pose} outside world bounds {world.bounds}")

    ranges = np.full(n_beams, np.nan)
    edges = world._edges
    if len(edges) > 0:
        # Vectorized over beams x edges.
        bearings = sensor_pose.psi + angles
        dirs = np.column_stack([np.cos(bearings), np.sin(bearings)])  # (B, 2)
        p = edges[:, 0, :]                        # (E, 2)
        d_seg = edges[:, 1, :] - p                # (E, 2)
        rel = p - origin                          # (E, 2)
        denom = dirs[:, None, 0] * d_seg[None, :, 1] - dirs[:, None, 1] * d_seg[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rel[None, :, 0] * d_seg[None, :, 1] - rel[None, :, 1] * d_seg[None, :, 0]) / denom
            u = (rel[None, :, 0] * dirs[:, None, 1] - rel[None, :, 1] * dirs[:, None, 0]) / denom
        valid = (np.abs(denom) > 1e-15) & (u >= 0.0) & (u <= 1.0) & (t >= 0.0)
        t = np.where(valid, t, np.inf)
        best = t.min(axis=1)
        hit = best <= max_range
        ranges[hit] = best[hit]

    if range_noise_sigma > 0.0:
        for i in range(n_beams):
            if math.isfinite(ranges[i]):
                noisy = ranges[i] + rng.gauss(0.0, range_noise_sigma)
                ranges[i] = min(max(noisy, 1e-6), max_range)

    return LidarScan(angles=angles, ranges=ranges, max_range=max_range)


# ---------------------------------------------------------------------------
# Vehicle plant
# ---------------------------------------------------------------------------

class Gear(IntEnum):
    """Gear channel; numeric values follow the drive-by-wire convention."""

    REVERSE = 1
    NEUTRAL = 2
    FORWARD = 3

    @property
    def direction(self) -> int:
        if self is Gear.FORWARD:
            return 1
        if self is Gear.REVERSE:
            return -1
        return 0


@dataclass(frozen=True)
class Control:
    """One control input: accel and brake in [0, 1], steering-wheel command
    in radians, and gear."""

    accel: float = 0.0
    brake: float = 0.0
    steer: float = 0.0
    gear: Gear = Gear.NEUTRAL


@dataclass(frozen=True)
class PlantParams:
    """Kinematic bicycle plant configuration.

    None of these values is measured from a particular vehicle; they are
    conventions sized so the primitive library produces parking-scale arcs.
    `disturb_accel` injects a constant longitudinal disturbance (grade).
    """

    wheelbase: float = 2.57
    v_max: float = 1.5
    a_max: float = 1.0
    b_max: float = 2.0
    steer_min: float = -10.0
    steer_max: float = 10.0
    steering_ratio: float = 16.0
    max_wheel_angle: float = 0.6
    dt: float = 0.05
    disturb_accel: float = 0.0


@dataclass(frozen=True)
class PlantState:
    """Vehicle pose plus signed longitudinal velocity (negative = reversing)."""

    pose: Pose2
    v: float = 0.0

    @property
    def speed(self) -> float:
        """Absolute vehicle speed, the quantity the control stack reports."""
        return abs(self.v)


def steering_command_to_wheel_angle(s: float, params: PlantParams) -> float:
    """Map a steering-wheel command to a road-wheel angle.

    The command is divided by the steering ratio and clamped to the physical
    road-wheel limit; the sign is preserved.
    """
    if not (params.steer_min <= s <= params.steer_max):
        raise ValueError(f"steering command {s} outside [{params.steer_min}, {params.steer_max}]")
    angle = s / params.steering_ratio
    return max(-params.max_wheel_angle, min(params.max_wheel_angle, angle))


def _validate_control(u: Control, params: PlantParams) -> None:
    if not (0.0 <= u.accel <= 1.0):
        raise ValueError(f"accel command {u.accel} outside [0, 1]")
    if not (0.0 <= u.brake <= 1.0):
        raise ValueError(f"brake command {u.brake} outside [0, 1]")
    if not isinstance(u.gear, Gear):
        raise ValueError(f"gear must be a Gear, got {u.gear!r}")
    # Steering range is checked by steering_command_to_wheel_angle.


def step_plant(state: PlantState, u: Control, dt: float, params: PlantParams) -> PlantState:
    """Advance the plant one forward-Euler step.

    Pose integrates at the pre-step velocity; speed then integrates
    acceleration toward the gear direction, brake decelerating the current
    motion toward zero (never through it), and clamps to [-v_max, v_max].
    Neutral gear coasts with braking only.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    _validate_control(u, params)
    phi = steering_command_to_wheel_angle(u.steer, params)

    v0 = state.v
    pose = state.pose
    x = pose.x + v0 * math.cos(pose.psi) * dt
    y = pose.y + v0 * math.sin(pose.psi) * dt
    psi = wrap_angle(pose.psi + (v0 / params.wheelbase) * math.tan(phi) * dt)

    v = v0 + u.gear.direction * u.accel * params.a_max * dt + params.disturb_accel * dt
    brake_dv = u.brake * params.b_max * dt
    if v > 0.0:
        v = max(0.0, v - brake_dv)
    elif v < 0.0:
        v = min(0.0, v + brake_dv)
    v = max(-params.v_max, min(params.v_max, v))

    return PlantState(pose=Pose2(x, y, psi), v=v)


# ---------------------------------------------------------------------------
# World file format
# ---------------------------------------------------------------------------

WORLD_FORMAT = "kinonav-world/1"


def world_to_dict(world: ObstacleWorld) -> dict:
    return {
        "format": WORLD_FORMAT,
        "bounds": [float(b) for b in world.bounds],
        "obstacles": [[[float(x), float(y)] for x, y in verts] for verts in world.obstacles],
    }


def world_from_dict(doc: dict) -> ObstacleWorld:
    if doc.get("format") != WORLD_FORMAT:
        raise ValueError(f"unsupported world format {doc.get('format')!r}")
    bounds = tuple(float(b) for b in doc["bounds"])
    obstacles = tuple(np.asarray(o, dtype=float) for o in doc.get("obstacles", []))
    return ObstacleWorld(obstacles=obstacles, bounds=bounds)


def save_world(world: ObstacleWorld, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(world_to_dict(world), sort_keys=False))


def load_world(path: str | Path) -> ObstacleWorld:
    return world_from_dict(yaml.safe_load(Path(path).read_text()))


def rectangle(cx: float, cy: float, length: float, width: float, yaw: float = 0.0) -> np.ndarray:
    """Axis vertices of a rectangle centered at (cx, cy), rotated by yaw."""
    hl, hw = length / 2.0, width / 2.0
    corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + np.array([cx, cy])


__all__ = [
    "ObstacleWorld", "LidarScan", "ray_cast", "scan_world",
    "Gear", "Control", "PlantParams", "PlantState",
    "steering_command_to_wheel_angle", "step_plant",
    "world_to_dict", "world_from_dict", "save_world", "load_world",
    "rectangle", "WORLD_FORMAT",
]
