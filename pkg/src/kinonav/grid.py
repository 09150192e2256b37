"""2D occupancy grid map built from LiDAR scans.

Each cell accumulates a clamped integer counter; occupied updates push the
derived occupancy value M toward 1, free-space updates toward 0, and cells
never observed stay at exactly 0.5 (unknown). M is queryable at continuous
world coordinates through bilinear interpolation between cell centers, with
analytic spatial gradients for scan matching.

Concurrency: writes (integrate_scan) require exclusive access; reads may run
concurrently with each other once mapping is done.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .geometry import Point2, Pose2
from .sim import LidarScan

COUNTER_MAX = 127
OCCUPIED_STEP = 16
FREE_STEP = 4
HYSTERESIS = 0.1


class CellState(Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    UNEXPLORED = "unexplored"


def classify(m: float) -> CellState:
    """Threshold an occupancy value with +-HYSTERESIS around unknown."""
    if m > 0.5 + HYSTERESIS:
        return CellState.OCCUPIED
    if m < 0.5 - HYSTERESIS:
        return CellState.FREE
    return CellState.UNEXPLORED


@dataclass
class GridSpec:
    """Construction-time extent of a grid (no dynamic resizing)."""

    origin: Pose2
    delta: float = 0.05
    width: int = 200
    height: int = 200


class OccupancyGrid:
    """Fixed-extent occupancy grid; cell (0, 0)'s corner sits at `origin`.

    Cells are indexed [iy, ix]; cell (ix, iy) covers the grid-frame square
    [ix*delta, (ix+1)*delta) x [iy*delta, (iy+1)*delta) and its center is
    the interpolation lattice node.
    """

    def __init__(self, origin: Pose2, delta: float = 0.05, width: int = 200, height: int = 200,
                 occupied_step: int = OCCUPIED_STEP, free_step: int = FREE_STEP):
        if delta <= 0.0:
            raise ValueError(f"delta must be positive, got {delta}")
        if width < 2 or height < 2:
            raise ValueError("grid needs at least 2x2 cells")
        if occupied_step < 1 or free_step < 1:
            raise ValueError("update steps must be positive")
        self.origin = origin
        self.delta = float(delta)
        self.width = int(width)
        self.height = int(height)
        self.occupied_step = int(occupied_step)
        self.free_step = int(free_step)
        self.counters = np.zeros((self.height, self.width), dtype=np.int16)

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(spec.origin, spec.delta, spec.width, spec.height)

    def copy(self) -> "OccupancyGrid":
        dup = OccupancyGrid(self.origin, self.delta, self.width, self.height,
                            self.occupied_step, self.free_step)
        dup.counters = self.counters.copy()
        return dup

    # -- frames -------------------------------------------------------------

    def world_to_grid(self, pts: np.ndarray) -> np.ndarray:
        """World (N, 2) points into grid-frame meters."""
        pts = np.asarray(pts, dtype=float)
        c = math.cos(self.origin.psi)
        s = math.sin(self.origin.psi)
        dx = pts[:, 0] - self.origin.x
        dy = pts[:, 1] - self.origin.y
        return np.column_stack([c * dx + s * dy, -s * dx + c * dy])

    def m_array(self) -> np.ndarray:
        """Full (height, width) array of occupancy values M in [0, 1]."""
        return 0.5 + self.counters.astype(float) / (2.0 * COUNTER_MAX)

    # -- continuous queries ---------------------------------------------------

    def _corner_setup(self, pts: np.ndarray):
        g = self.world_to_grid(pts)
        u = g / self.delta - 0.5
        i0 = np.floor(u).astype(np.int64)
        f = u - i0
        inside = (
            (i0[:, 0] >= 0) & (i0[:, 0] <= self.width - 2)
            & (i0[:, 1] >= 0) & (i0[:, 1] <= self.height - 2)
        )
        ix = np.clip(i0[:, 0], 0, self.width - 2)
        iy = np.clip(i0[:, 1], 0, self.height - 2)
        scale = 1.0 / (2.0 * COUNTER_MAX)
        m00 = 0.5 + self.counters[iy, ix] * scale
        m10 = 0.5 + self.counters[iy, ix + 1] * scale
        m01 = 0.5 + self.counters[iy + 1, ix] * scale
        m11 = 0.5 + self.counters[iy + 1, ix + 1] * scale
        return f[:, 0], f[:, 1], m00, m10, m01, m11, inside

    def interpolate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear M at world points.

        Returns (values, inside); points outside the interpolable interior
        report 0.5 and inside=False.
        """
        fx, fy, m00, m10, m01, m11, inside = self._corner_setup(pts)
        val = (1 - fy) * ((1 - fx) * m00 + fx * m10) + fy * ((1 - fx) * m01 + fx * m11)
        return np.where(inside, val, 0.5), inside

    def gradients(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic world-frame gradient (dM/dx, dM/dy) of the bilinear surface.

        Returns ((N, 2) gradients, inside); zero outside the interior.
        """
        fx, fy, m00, m10, m01, m11, inside = self._corner_setup(pts)
        dgx = ((1 - fy) * (m10 - m00) + fy * (m11 - m01)) / self.delta
        dgy = ((1 - fx) * (m01 - m00) + fx * (m11 - m10)) / self.delta
        c = math.cos(self.origin.psi)
        s = math.sin(self.origin.psi)
        grad = np.column_stack([c * dgx - s * dgy, s * dgx + c * dgy])
        grad[~inside] = 0.0
        return grad, inside

    def value_at(self, p: Point2) -> tuple[float, bool]:
        """Scalar interpolate(); returns (M, inside)."""
        vals, inside = self.interpolate(np.array([[p.x, p.y]]))
        return float(vals[0]), bool(inside[0])

    def gradient_at(self, p: Point2) -> tuple[tuple[float, float], bool]:
        """Scalar gradients(); returns ((dM/dx, dM/dy), inside)."""
        grads, inside = self.gradients(np.array([[p.x, p.y]]))
        return (float(grads[0, 0]), float(grads[0, 1])), bool(inside[0])

    # -- cell-level queries ---------------------------------------------------

    def cell_indices(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices (ix, iy) containing each world point, plus inside mask."""
        g = self.world_to_grid(pts)
        idx = np.floor(g / self.delta).astype(np.int64)
        inside = (
            (idx[:, 0] >= 0) & (idx[:, 0] < self.width)
            & (idx[:, 1] >= 0) & (idx[:, 1] < self.height)
        )
        return idx[:, 0], idx[:, 1], inside

    def cell_values(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (uninterpolated) M of the cell containing each point."""
        ix, iy, inside = self.cell_indices(pts)
        m = np.full(len(ix), 0.5)
        m[inside] = 0.5 + self.counters[iy[inside], ix[inside]] / (2.0 * COUNTER_MAX)
        return m, inside

    def cell_state(self, ix: int, iy: int) -> CellState:
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            return CellState.UNEXPLORED
        return classify(0.5 + self.counters[iy, ix] / (2.0 * COUNTER_MAX))

    def cell_state_at(self, p: Point2) -> CellState:
        ix, iy, inside = self.cell_indices(np.array([[p.x, p.y]]))
        if not inside[0]:
            return CellState.UNEXPLORED
        return self.cell_state(int(ix[0]), int(iy[0]))

    # -- mapping --------------------------------------------------------------

    def _apply_counts(self, flat_cells: np.ndarray, step: int) -> None:
        flat = self.counters.reshape(-1)
        acc = flat.astype(np.int32)
        np.add.at(acc, flat_cells, step)
        np.clip(acc, -COUNTER_MAX, COUNTER_MAX, out=acc)
        flat[:] = acc.astype(np.int16)

    def integrate_scan(self, sensor_pose: Pose2, scan: LidarScan) -> None:
        """Fold one scan into the map.

        For every returned beam, the cells the beam traverses get a free-space
        update and the endpoint cell gets an occupied update (never a free one
        from the same beam). Beams leaving the grid are clipped: traversal
        updates apply up to the boundary and the occupied update is dropped.
        """
        pts = scan.points()
        if len(pts) == 0:
            return
        c = math.cos(sensor_pose.psi)
        s = math.sin(sensor_pose.psi)
        world = np.column_stack([
            sensor_pose.x + c * pts[:, 0] - s * pts[:, 1],
            sensor_pose.y + s * pts[:, 0] + c * pts[:, 1],
        ])
        g_end = self.world_to_grid(world)
        g_start = self.world_to_grid(np.array([[sensor_pose.x, sensor_pose.y]]))[0]

        step = self.delta / 2.0
        w, h = self.width, self.height
        free_cells: list[np.ndarray] = []
        occ_cells: list[int] = []
        for k in range(len(g_end)):
            seg = g_end[k] - g_start
            length = math.hypot(seg[0], seg[1])
            n = max(int(math.ceil(length / step)), 1)
            t = np.linspace(0.0, 1.0, n + 1)
            sample_x = g_start[0] + t * seg[0]
            sample_y = g_start[1] + t * seg[1]
            ix = np.floor(sample_x / self.delta).astype(np.int64)
            iy = np.floor(sample_y / self.delta).astype(np.int64)
            valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            keys = np.unique(iy[valid] * w + ix[valid])
            end_ix = int(np.floor(g_end[k, 0] / self.delta))
            end_iy = int(np.floor(g_end[k, 1] / self.delta))
            if 0 <= end_ix < w and 0 <= end_iy < h:
                end_key = end_iy * w + end_ix
                keys = keys[keys != end_key]
                occ_cells.append(end_key)
            free_cells.append(keys)

        if free_cells:
            all_free = np.concatenate(free_cells)
            if len(all_free):
                self._apply_counts(all_free, -FREE_STEP)
        if occ_cells:
            self._apply_counts(np.asarray(occ_cells, dtype=np.int64), OCCUPIED_STEP)


# ---------------------------------------------------------------------------
# Map file format: binary PGM raster plus a YAML sidecar header
# ---------------------------------------------------------------------------

MAP_FORMAT = "kinonav-map/1"

# Counters in [-127, 127] map injectively onto bytes with 0=free, 128=unknown,
# 255=occupied; import is the rounded inverse so export/import/export is
# byte-stable.
_BYTE_PER_COUNT = 127.5 / COUNTER_MAX


def _counters_to_bytes(counters: np.ndarray) -> np.ndarray:
    return np.rint(127.5 + counters.astype(float) * _BYTE_PER_COUNT).astype(np.uint8)


def _bytes_to_counters(raster: np.ndarray) -> np.ndarray:
    return np.rint((raster.astype(float) - 127.5) / _BYTE_PER_COUNT).astype(np.int16)


def save_map(grid: OccupancyGrid, pgm_path: str | Path) -> None:
    """Write the raster to `pgm_path` and the header to `<pgm_path>.yaml`."""
    pgm_path = Path(pgm_path)
    raster = _counters_to_bytes(grid.counters)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + raster.tobytes())
    sidecar = {
        "format": MAP_FORMAT,
        "image": pgm_path.name,
        "origin": [grid.origin.x, grid.origin.y, grid.origin.psi],
        "delta": grid.delta,
        "width": grid.width,
        "height": grid.height,
    }
    Path(str(pgm_path) + ".yaml").write_text(yaml.safe_dump(sidecar, sort_keys=False))


def load_map(pgm_path: str | Path) -> OccupancyGrid:
    pgm_path = Path(pgm_path)
    sidecar = yaml.safe_load(Path(str(pgm_path) + ".yaml").read_text())
    if sidecar.get("format") != MAP_FORMAT:
        raise ValueError(f"unsupported map format {sidecar.get('format')!r}")
    blob = pgm_path.read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError("map raster is not a binary PGM")
    # Header is exactly three whitespace-separated fields after the magic.
    parts = blob.split(b"\n", 3)
    width, height = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("map raster must use maxval 255")
    raster = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    ox, oy, opsi = sidecar["origin"]
    grid = OccupancyGrid(Pose2(ox, oy, opsi), float(sidecar["delta"]), width, height)
    grid.counters = _bytes_to_counters(raster.reshape(height, width))
    return grid


__all__ = [
    "CellState", "classify", "GridSpec", "OccupancyGrid",
    "save_map", "load_map", "MAP_FORMAT",
    "COUNTER_MAX", "OCCUPIED_STEP", "FREE_STEP", "HYSTERESIS",
]
