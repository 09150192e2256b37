"""Motion primitive library: canonical short maneuvers recorded as
(state, control) sequences in the vehicle start frame.

Each primitive is produced by rolling the simulated plant forward from rest
under a scripted control sequence and sampling at the plant timestep, so
every stored pose is dynamically realizable by construction. The standard
set holds six maneuvers: straight, left curve and right curve, each in
forward and reverse gear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose2, se2_compose_poses
from .sim import Control, Gear, PlantParams, PlantState, step_plant

STANDARD_IDS = (
    "forward_straight", "reverse_straight",
    "forward_left", "forward_right",
    "reverse_left", "reverse_right",
)


def _chord_lengths(poses: np.ndarray) -> np.ndarray:
    d = np.diff(poses[:, :2], axis=0)
    return np.hypot(d[:, 0], d[:, 1])


@dataclass(frozen=True)
class MotionPrimitive:
    """A time-indexed maneuver in the start frame.

    poses[k] is the pose at times[k] relative to the start pose; the control
    columns hold the command applied over [times[k], times[k+1]) (the last
    row repeats the final command). Gear is constant over a primitive and
    the steering command never changes sign.
    """

    primitive_id: str
    times: np.ndarray
    poses: np.ndarray
    speeds: np.ndarray
    accels: np.ndarray
    brakes: np.ndarray
    steers: np.ndarray
    gear: Gear
    arc_length: float

    def __post_init__(self) -> None:
        n = len(self.times)
        if n < 2:
            raise ValueError("a primitive needs at least two samples")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(np.abs(self.poses[0]) > 1e-12) or self.times[0] != 0.0:
            raise ValueError("first sample must be the identity pose at t=0")
        signs = set(np.sign(self.steers).tolist())
        if len(signs - {0.0}) > 1:
            raise ValueError("steering command sign must be constant over a primitive")
        chords = float(_chord_lengths(self.poses).sum())
        if chords > 0.0 and abs(chords - self.arc_length) > 0.01 * max(chords, self.arc_length):
            raise ValueError(
                f"arc_length {self.arc_length:.6f} disagrees with chord sum {chords:.6f}")

    def __len__(self) -> int:
        return len(self.times)

    def end_pose(self) -> Pose2:
        x, y, psi = self.poses[-1]
        return Pose2(float(x), float(y), float(psi))

    def truncated(self, fraction: float) -> "MotionPrimitive":
        """Keep the prefix up to fraction * arc_length, at least two samples.

        The retained samples are copied exactly (no resampling)."""
        if not (0.0 < fraction <= 1.0):
            raise ValueError(f"truncation fraction must be in (0, 1], got {fraction}")
        if fraction == 1.0:
            return self
        target = fraction * self.arc_length
        cum = np.concatenate([[0.0], np.cumsum(_chord_lengths(self.poses))])
        keep = int(np.searchsorted(cum, target, side="right"))
        keep = max(keep, 2)
        return MotionPrimitive(
            primitive_id=self.primitive_id,
            times=self.times[:keep].copy(),
            poses=self.poses[:keep].copy(),
            speeds=self.speeds[:keep].copy(),
            accels=self.accels[:keep].copy(),
            brakes=self.brakes[:keep].copy(),
            steers=self.steers[:keep].copy(),
            gear=self.gear,
            arc_length=float(cum[keep - 1]),
        )

    def placed_at(self, node_pose: Pose2) -> np.ndarray:
        """World-frame waypoints (N, 3) of this primitive started at node_pose."""
        return se2_compose_poses(node_pose, self.poses)


def truncate(p: MotionPrimitive, fraction: float) -> MotionPrimitive:
    return p.truncated(fraction)


def place_in_frame(p: MotionPrimitive, node_pose: Pose2) -> np.ndarray:
    return p.placed_at(node_pose)


@dataclass(frozen=True)
class PrimitiveSet:
    """Immutable collection of primitives with unique ids."""

    primitives: tuple[MotionPrimitive, ...]

    def __post_init__(self) -> None:
        if not self.primitives:
            raise ValueError("primitive set must be nonempty")
        ids = [p.primitive_id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate primitive ids: {ids}")

    def __len__(self) -> int:
        return len(self.primitives)

    def __getitem__(self, index: int) -> MotionPrimitive:
        return self.primitives[index]

    def by_id(self, primitive_id: str) -> MotionPrimitive:
        for p in self.primitives:
            if p.primitive_id == primitive_id:
                return p
        raise KeyError(primitive_id)


def _default_id(gear: Gear, steer: float) -> str:
    direction = "forward" if gear is Gear.FORWARD else "reverse"
    if steer == 0.0:
        return f"{direction}_straight"
    return f"{direction}_{'right' if steer > 0 else 'left'}"


def record_primitive(
    plant_params: PlantParams,
    control_script: list[tuple[Control, float]],
    primitive_id: str | None = None,
) -> MotionPrimitive:
    """Roll the plant from rest at the origin through a control script.

    Each script entry holds the control and how long to apply it; durations
    are quantized to the plant timestep. All entries must share one gear and
    one steering sign.
    """
    if not control_script:
        raise ValueError("control script is empty")
    gears = {u.gear for u, _ in control_script}
    if len(gears) != 1:
        raise ValueError(f"gear must be constant over a primitive, got {gears}")
    signs = {np.sign(u.steer) for u, _ in control_script} - {0.0}
    if len(signs) > 1:
        raise ValueError("steering sign must be constant over a primitive")
    gear = next(iter(gears))

    dt = plant_params.dt
    state = PlantState(pose=Pose2.identity(), v=0.0)
    times = [0.0]
    poses = [(0.0, 0.0, 0.0)]
    speeds = [0.0]
    controls: list[Control] = []
    t = 0.0
    for u, duration in control_script:
        n_steps = int(round(duration / dt))
        for _ in range(n_steps):
            state = step_plant(state, u, dt, plant_params)
            t += dt
            times.append(t)
            poses.append((state.pose.x, state.pose.y, state.pose.psi))
            speeds.append(state.v)
            controls.append(u)
    if not controls:
        raise ValueError("control script produced no samples beyond the origin")
    controls.append(controls[-1])

    poses_arr = np.asarray(poses)
    prim_id = primitive_id or _default_id(gear, controls[0].steer)
    return MotionPrimitive(
        primitive_id=prim_id,
        times=np.asarray(times),
        poses=poses_arr,
        speeds=np.asarray(speeds),
        accels=np.array([u.accel for u in controls]),
        brakes=np.array([u.brake for u in controls]),
        steers=np.array([u.steer for u in controls]),
        gear=gear,
        arc_length=float(_chord_lengths(poses_arr).sum()),
    )


def generate_standard_set(
    plant_params: PlantParams,
    target_speed: float = 0.4,
    arc_length: float = 3.0,
    steer_magnitude: float = 10.0,
    ramp_time: float = 1.0,
) -> PrimitiveSet:
    """Record the six standard maneuvers.

    Each script accelerates from rest to the target speed over `ramp_time`
    and then cruises so the total path length lands near `arc_length` (exact
    to one timestep of travel).
    """
    dt = plant_params.dt
    accel_cmd = target_speed / (plant_params.a_max * ramp_time)
    if accel_cmd > 1.0:
        raise ValueError("target speed unreachable within the ramp time")
    ramp_steps = int(round(ramp_time / dt))
    # Forward-Euler ramp distance: pose integrates the pre-step speed.
    ramp_dist = accel_cmd * plant_params.a_max * dt * dt * (ramp_steps * (ramp_steps - 1) / 2.0)
    cruise_steps = max(int(round((arc_length - ramp_dist) / (target_speed * dt))), 1)

    primitives = []
    for gear in (Gear.FORWARD, Gear.REVERSE):
        for steer in (0.0, steer_magnitude, -steer_magnitude):
            script = [
                (Control(accel=accel_cmd, steer=steer, gear=gear), ramp_steps * dt),
                (Control(accel=0.0, steer=steer, gear=gear), cruise_steps * dt),
            ]
            primitives.append(record_primitive(plant_params, script))
    return PrimitiveSet(primitives=tuple(primitives))


# ---------------------------------------------------------------------------
# Serialization (lossless to stored precision)
# ---------------------------------------------------------------------------

PRIMITIVES_FORMAT = "kinonav-primitives/1"


def primitive_set_to_dict(pset: PrimitiveSet, plant_params: PlantParams) -> dict:
    doc = {"format": PRIMITIVES_FORMAT, "plant": vars(plant_params).copy(), "primitives": []}
    for p in pset.primitives:
        samples = [
            [float(p.times[k]), float(p.poses[k, 0]), float(p.poses[k, 1]),
             float(p.poses[k, 2]), float(p.speeds[k]), float(p.accels[k]),
             float(p.brakes[k]), float(p.steers[k]), int(p.gear)]
            for k in range(len(p))
        ]
        doc["primitives"].append({
            "id": p.primitive_id,
            "gear": int(p.gear),
            "arc_length": p.arc_length,
            "columns": ["t", "x", "y", "psi", "v", "a", "b", "s", "g"],
            "samples": samples,
        })
    return doc


def primitive_set_from_dict(doc: dict) -> tuple[PrimitiveSet, PlantParams]:
    if doc.get("format") != PRIMITIVES_FORMAT:
        raise ValueError(f"unsupported primitive format {doc.get('format')!r}")
    plant = PlantParams(**doc["plant"])
    primitives = []
    for entry in doc["primitives"]:
        table = np.asarray(entry["samples"], dtype=float)
        primitives.append(MotionPrimitive(
            primitive_id=entry["id"],
            times=table[:, 0],
            poses=table[:, 1:4],
            speeds=table[:, 4],
            accels=table[:, 5],
            brakes=table[:, 6],
            steers=table[:, 7],
            gear=Gear(int(entry["gear"])),
            arc_length=float(entry["arc_length"]),
        ))
    return PrimitiveSet(primitives=tuple(primitives)), plant


def save_primitive_set(pset: PrimitiveSet, plant_params: PlantParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(primitive_set_to_dict(pset, plant_params), indent=1))


def load_primitive_set(path: str | Path) -> tuple[PrimitiveSet, PlantParams]:
    return primitive_set_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "MotionPrimitive", "PrimitiveSet", "record_primitive", "generate_standard_set",
    "truncate", "place_in_frame", "STANDARD_IDS",
    "primitive_set_to_dict", "primitive_set_from_dict",
    "save_primitive_set", "load_primitive_set", "PRIMITIVES_FORMAT",
]
