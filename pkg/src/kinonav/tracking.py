"""Closed-loop plan execution.

Translates a plan into per-segment gear/steer/speed actions, follows the
waypoints with a PID speed controller against the simulated plant, and logs
a full trace for drift reporting. Steering is commanded open loop per
segment; speed is the only closed loop. Pose feedback comes either from the
plant itself (ground truth) or from scan matching against a live-updated
occupancy grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose2
from .grid import OccupancyGrid
from .primitives import PrimitiveSet
from .rrt import Configuration, Plan, distance
from .scan_matching import match_scan
from .sim import Control, Gear, ObstacleWorld, PlantParams, PlantState, scan_world, step_plant


def drift(final: Configuration, goal: Configuration) -> float:
    """Distance between an achieved configuration and the goal, using the
    planner metric."""
    return distance(final, goal)


# ---------------------------------------------------------------------------
# PID speed control
# ---------------------------------------------------------------------------

class SpeedPid:
    """Discrete PID on the speed error.

    The integral is a running sum of error times dt and the derivative a
    backward difference; the output is clamped to [-1, 1] and the
    accumulator freezes while the raw output is clamped (anti-windup).
    """

    def __init__(self, kp: float, ki: float, kd: float, dt: float):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.dt = dt
        self.integral = 0.0
        self.prev_error: float | None = None

    def step(self, error: float) -> float:
        derivative = 0.0 if self.prev_error is None else (error - self.prev_error) / self.dt
        grown = self.integral + error * self.dt
        raw = self.kp * error + self.ki * grown + self.kd * derivative
        if -1.0 <= raw <= 1.0:
            self.integral = grown
            out = raw
        else:
            out = max(-1.0, min(1.0, raw))
        self.prev_error = error
        return out


def route_effort(u: float, speed: float, target: float, deadband: float) -> tuple[float, float]:
    """Split a signed control effort into (accel, brake) channels.

    Positive effort drives the accelerator; negative effort drives the brake
    only once the measured speed exceeds the target beyond the deadband,
    preventing accel/brake chatter around the setpoint.
    """
    if u >= 0.0:
        return min(u, 1.0), 0.0
    if speed > target + deadband:
        return 0.0, min(-u, 1.0)
    return 0.0, 0.0


# ---------------------------------------------------------------------------
# Plan to action segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSegment:
    """One executable stretch: fixed gear and steering command, a target
    speed, the waypoints to pass, and whether to stop at the end."""

    gear: Gear
    steer: float
    target_speed: float
    waypoints: np.ndarray
    terminal_stop: bool


def plan_to_segments(plan: Plan, primitives: PrimitiveSet,
                     target_speed: float = 0.4) -> list[ActionSegment]:
    """One action segment per plan segment.

    Gear and steering command come from the recorded primitive the segment
    used, so replaying the actions reproduces the planned geometry. A
    terminal stop is required at every gear change and at the final segment.
    """
    if not plan.segments:
        raise ValueError("plan has no segments")
    segments: list[ActionSegment] = []
    for i, seg in enumerate(plan.segments):
        prim = primitives.by_id(seg.primitive_id)
        if i + 1 < len(plan.segments):
            next_gear = primitives.by_id(plan.segments[i + 1].primitive_id).gear
            stop = next_gear != prim.gear
        else:
            stop = True
        segments.append(ActionSegment(
            gear=prim.gear,
            steer=float(prim.steers[0]),
            target_speed=target_speed,
            waypoints=seg.waypoints,
            terminal_stop=stop,
        ))
    return segments


# ---------------------------------------------------------------------------
# Pose sources
# ---------------------------------------------------------------------------

class TruthPoseSource:
    """Feedback straight from the plant."""

    def observe(self, state: PlantState, t: float) -> Pose2:
        return state.pose


class SlamPoseSource:
    """Feedback from scan matching against a live-updated grid.

    Each observation casts a scan at the true pose, matches it starting from
    the previous estimate, and folds the scan into the grid once the vehicle
    has moved far enough since the last map update. The very first scan on a
    blank grid bootstraps the map at the initial estimate without matching.
    """

    def __init__(
        self,
        world: ObstacleWorld,
        grid: OccupancyGrid,
        initial_estimate: Pose2,
        n_beams: int = 180,
        fov: float = 2.0 * math.pi,
        max_range: float = 20.0,
        integrate_motion: float = 0.2,
        integrate_rotation: float = 0.15,
        max_iters: int = 30,
        tol: float = 1e-4,
        bootstrapped: bool = False,
    ):
        self.world = world
        self.grid = grid
        self.estimate = initial_estimate
        self.n_beams = n_beams
        self.fov = fov
        self.max_range = max_range
        self.integrate_motion = integrate_motion
        self.integrate_rotation = integrate_rotation
        self.max_iters = max_iters
        self.tol = tol
        self.matches = 0
        self.failures = 0
        self._bootstrapped = bootstrapped
        self._last_integrated: Pose2 | None = None

    def _should_integrate(self) -> bool:
        if self._last_integrated is None:
            return True
        moved = math.hypot(self.estimate.x - self._last_integrated.x,
                           self.estimate.y - self._last_integrated.y)
        turned = abs(self.estimate.psi - self._last_integrated.psi)
        turned = min(turned, 2.0 * math.pi - turned)
        return moved >= self.integrate_motion or turned >= self.integrate_rotation

    def observe(self, state: PlantState, t: float) -> Pose2:
        scan = scan_world(self.world, state.pose, self.n_beams, self.fov, self.max_range)
        if not self._bootstrapped:
            self.grid.integrate_scan(self.estimate, scan)
            self._last_integrated = self.estimate
            self._bootstrapped = True
            return self.estimate
        result = match_scan(self.grid, scan, self.estimate,
                            max_iters=self.max_iters, tol=self.tol)
        self.matches += 1
        if result.converged:
            self.estimate = result.pose
        else:
            self.failures += 1
        if self._should_integrate():
            self.grid.integrate_scan(self.estimate, scan)
            self._last_integrated = self.estimate
        return self.estimate

    @property
    def failure_rate(self) -> float:
        return self.failures / self.matches if self.matches else 0.0


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("t", "x_true", "y_true", "psi_true", "x_est", "y_est", "psi_est",
                 "v", "a", "b", "s", "g", "e_v")


@dataclass
class Trace:
    """Closed-loop execution log, one row per control step."""

    times: np.ndarray
    true_poses: np.ndarray
    est_poses: np.ndarray
    controls: np.ndarray          # columns a, b, s, g
    speeds: np.ndarray            # signed plant velocity
    speed_errors: np.ndarray      # |target - speed|
    waypoint_events: list[tuple[float, int, int]] = field(default_factory=list)
    final_true: Configuration = Configuration(0.0, 0.0, 0.0, 0.0)
    final_est: Configuration = Configuration(0.0, 0.0, 0.0, 0.0)
    failed: bool = False
    note: str = ""

    def __len__(self) -> int:
        return len(self.times)


def save_trace(trace: Trace, path: str | Path) -> None:
    """Write the trace as a comma-delimited table, full float precision."""
    lines = [",".join(TRACE_COLUMNS)]
    for k in range(len(trace)):
        row = (
            trace.times[k],
            trace.true_poses[k, 0], trace.true_poses[k, 1], trace.true_poses[k, 2],
            trace.est_poses[k, 0], trace.est_poses[k, 1], trace.est_poses[k, 2],
            trace.speeds[k],
            trace.controls[k, 0], trace.controls[k, 1], trace.controls[k, 2],
            int(trace.controls[k, 3]),
            trace.speed_errors[k],
        )
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Tracker
# ---------------------------------------------------------------------------

@dataclass
class TrackerParams:
    """Tracking loop configuration; gains are tuned once against the default
    plant and committed here."""

    target_speed: float = 0.4
    kp: float = 1.5
    ki: float = 0.4
    kd: float = 0.0
    deadband: float = 0.02
    capture_radius: float = 0.1
    waypoint_timeout: float = 10.0


def _waypoint_passed(est_xy: np.ndarray, waypoints: np.ndarray, idx: int,
                     capture_radius: float) -> bool:
    wp = waypoints[idx, :2]
    offset = est_xy - wp
    if math.hypot(offset[0], offset[1]) <= capture_radius:
        return True
    if idx + 1 < len(waypoints):
        direction = waypoints[idx + 1, :2] - wp
    else:
        direction = wp - waypoints[idx - 1, :2] if len(waypoints) > 1 else np.zeros(2)
    return float(offset @ direction) > 0.0


def track(
    plan: Plan,
    primitives: PrimitiveSet,
    plant_params: PlantParams,
    pose_source: TruthPoseSource | SlamPoseSource,
    params: TrackerParams | None = None,
    start_state: PlantState | None = None,
) -> Trace:
    """Execute a plan segment by segment.

    Per segment the gear and steering are set open loop and the PID holds the
    target speed; a waypoint counts as passed when the estimated position
    projects beyond it along the segment or falls within the capture radius.
    Terminal stops brake the plant to rest (gear never changes while moving).
    A waypoint not reached within the timeout marks the trace failed.
    """
    params = params or TrackerParams()
    state = start_state or PlantState(pose=plan.start.pose(), v=0.0)
    dt = plant_params.dt
    pid = SpeedPid(params.kp, params.ki, params.kd, dt)

    rows_t: list[float] = []
    rows_true: list[tuple] = []
    rows_est: list[tuple] = []
    rows_u: list[tuple] = []
    rows_v: list[float] = []
    rows_e: list[float] = []
    events: list[tuple[float, int, int]] = []
    t = 0.0
    failed = False
    note = ""
    est = pose_source.observe(state, t) if plan.segments else state.pose

    def log(u: Control, e_v: float) -> None:
        rows_t.append(t)
        rows_true.append((state.pose.x, state.pose.y, state.pose.psi))
        rows_est.append((est.x, est.y, est.psi))
        rows_u.append((u.accel, u.brake, u.steer, int(u.gear)))
        rows_v.append(state.v)
        rows_e.append(e_v)

    segments = plan_to_segments(plan, primitives, params.target_speed) if plan.segments else []
    for seg_idx, seg in enumerate(segments):
        if failed:
            break
        wp = seg.waypoints
        wp_idx = 0
        last_pass_t = t
        brake_latch = False
        stop_decel = plant_params.b_max
        while True:
            est = pose_source.observe(state, t)
            est_xy = np.array([est.x, est.y])
            while wp_idx < len(wp) and _waypoint_passed(est_xy, wp, wp_idx,
                                                        params.capture_radius):
                events.append((t, seg_idx, wp_idx))
                wp_idx += 1
                last_pass_t = t

            if wp_idx >= len(wp):
                if seg.terminal_stop and state.v != 0.0:
                    u = Control(accel=0.0, brake=1.0, steer=seg.steer, gear=seg.gear)
                    log(u, abs(state.v))
                    state = step_plant(state, u, dt, plant_params)
                    t += dt
                    continue
                break

            if t - last_pass_t > params.waypoint_timeout:
                failed = True
                note = f"timeout at segment {seg_idx} waypoint {wp_idx}"
                break

            speed = abs(state.v)
            if seg.terminal_stop:
                remaining = float(np.hypot(*(wp[-1, :2] - est_xy)))
                stop_dist = speed * speed / (2.0 * stop_decel) + speed * dt
                if brake_latch or remaining <= stop_dist:
                    brake_latch = True
                    if state.v == 0.0:
                        # Stopped short of an unpassed waypoint; creep again.
                        brake_latch = False
                    else:
                        u = Control(accel=0.0, brake=1.0, steer=seg.steer, gear=seg.gear)
                        log(u, speed)
                        state = step_plant(state, u, dt, plant_params)
                        t += dt
                        continue

            error = seg.target_speed - speed
            effort = pid.step(error)
            accel, brake = route_effort(effort, speed, seg.target_speed, params.deadband)
            u = Control(accel=accel, brake=brake, steer=seg.steer, gear=seg.gear)
            log(u, abs(error))
            state = step_plant(state, u, dt, plant_params)
            t += dt

    final_est = pose_source.observe(state, t) if segments else state.pose
    n = len(rows_t)
    return Trace(
        times=np.asarray(rows_t),
        true_poses=np.asarray(rows_true).reshape(n, 3),
        est_poses=np.asarray(rows_est).reshape(n, 3),
        controls=np.asarray(rows_u).reshape(n, 4),
        speeds=np.asarray(rows_v),
        speed_errors=np.asarray(rows_e),
        waypoint_events=events,
        final_true=Configuration(state.pose.x, state.pose.y, state.pose.psi, abs(state.v)),
        final_est=Configuration(final_est.x, final_est.y, final_est.psi, abs(state.v)),
        failed=failed,
        note=note,
    )


__all__ = [
    "drift", "SpeedPid", "route_effort", "ActionSegment", "plan_to_segments",
    "TruthPoseSource", "SlamPoseSource", "Trace", "TrackerParams", "track",
    "save_trace", "TRACE_COLUMNS",
]
