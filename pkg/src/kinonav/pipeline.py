"""Scenario pipeline: load a scenario config, build or ingest a map, plan
over seeds, optionally track the plan closed loop, and emit reports, traces,
and plot-ready artifacts.

Seeds are independent: each seed's pipeline is single-threaded and every
stage is bit-reproducible from (scenario, seed). Planner wall times are
measured but written to a separate timing file so the report itself stays
deterministic.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .collision import (DEFAULT_EPSILON, MappedCollisionChecker, VehicleFootprint,
                        VirtualCollisionChecker)
from .geometry import Pose2
from .grid import GridSpec, OccupancyGrid, save_map
from .primitives import PrimitiveSet, generate_standard_set, save_primitive_set
from .rrt import (Configuration, Plan, PlannerParams, distance, grow, plan_to_dict,
                  save_plan, tree_search, tree_to_rows)
from .sim import (Control, Gear, ObstacleWorld, PlantParams, PlantState, load_world,
                  step_plant, world_from_dict)
from .tracking import (SlamPoseSource, Trace, TrackerParams, TruthPoseSource, drift,
                       save_trace, track)

SCENARIO_FORMAT = "kinonav-scenario/1"
REPORT_FORMAT = "kinonav-report/1"

_GEAR_NAMES = {"forward": Gear.FORWARD, "reverse": Gear.REVERSE, "neutral": Gear.NEUTRAL}


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 180
    fov: float = 2.0 * math.pi
    max_range: float = 20.0


@dataclass(frozen=True)
class MappingLeg:
    """One open-loop stretch of the scripted mapping drive."""

    gear: Gear
    steer: float = 0.0
    accel: float = 0.0
    brake: float = 0.0
    duration: float = 1.0


@dataclass
class Scenario:
    """A fully resolved experiment description."""

    name: str
    world: ObstacleWorld
    start: Configuration
    goal: Configuration
    checker_variant: str
    planner: PlannerParams
    plant: PlantParams = field(default_factory=PlantParams)
    footprint: VehicleFootprint = field(default_factory=VehicleFootprint)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    epsilon: float = DEFAULT_EPSILON
    target_speed: float = 0.4
    primitive_arc_length: float = 3.0
    steer_magnitude: float = 10.0
    tracking_feedback: str = "truth"
    tracker: TrackerParams = field(default_factory=TrackerParams)
    grid_spec: GridSpec | None = None
    mapping_drive: tuple[MappingLeg, ...] = ()

    def __post_init__(self) -> None:
        if self.checker_variant not in ("virtual", "mapped"):
            raise ValueError(f"unknown checker variant {self.checker_variant!r}")
        if self.tracking_feedback not in ("truth", "slam"):
            raise ValueError(f"unknown tracking feedback {self.tracking_feedback!r}")
        if self.checker_variant == "mapped" and self.grid_spec is None:
            raise ValueError("mapped scenarios need a grid spec")
        xb, yb = self.planner.x_bounds, self.planner.y_bounds
        if not (xb[0] <= self.goal.x <= xb[1] and yb[0] <= self.goal.y <= yb[1]):
            raise ValueError("goal lies outside the sampling bounds")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    doc = yaml.safe_load(path.read_text())
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"unsupported scenario format {doc.get('format')!r}")

    world_ref = doc["world"]
    if isinstance(world_ref, dict):
        world = world_from_dict(world_ref)
    else:
        world_path = path.parent / world_ref
        if not world_path.exists():
            raise FileNotFoundError(f"world file {world_path} referenced by {path} is missing")
        world = load_world(world_path)

    planner_doc = dict(doc["planner"])
    planner = PlannerParams(
        x_bounds=tuple(planner_doc.pop("x_bounds")),
        y_bounds=tuple(planner_doc.pop("y_bounds")),
        **planner_doc,
    )
    plant = PlantParams(**doc.get("plant", {}))
    footprint = VehicleFootprint(**doc.get("footprint", {}))
    lidar = LidarConfig(**doc.get("lidar", {}))
    tracker = TrackerParams(**doc.get("tracker", {}))

    grid_spec = None
    mapping_drive: tuple[MappingLeg, ...] = ()
    if "mapping" in doc:
        m = doc["mapping"]
        g = m["grid"]
        ox, oy, opsi = g["origin"]
        grid_spec = GridSpec(origin=Pose2(ox, oy, opsi), delta=g.get("delta", 0.05),
                             width=g["width"], height=g["height"])
        mapping_drive = tuple(
            MappingLeg(
                gear=_GEAR_NAMES[leg["gear"]],
                steer=float(leg.get("steer", 0.0)),
                accel=float(leg.get("accel", 0.0)),
                brake=float(leg.get("brake", 0.0)),
                duration=float(leg["duration"]),
            )
            for leg in m.get("drive", ())
        )

    return Scenario(
        name=doc["name"],
        world=world,
        start=Configuration(*doc.get("start", (0.0, 0.0, 0.0, 0.0))),
        goal=Configuration(*doc["goal"]),
        checker_variant=doc.get("checker", "virtual"),
        planner=planner,
        plant=plant,
        footprint=footprint,
        lidar=lidar,
        epsilon=float(doc.get("epsilon", DEFAULT_EPSILON)),
        target_speed=float(doc.get("target_speed", 0.4)),
        primitive_arc_length=float(doc.get("primitive_arc_length", 3.0)),
        steer_magnitude=float(doc.get("steer_magnitude", 10.0)),
        tracking_feedback=doc.get("tracking", {}).get("feedback", "truth"),
        tracker=tracker,
        grid_spec=grid_spec,
        mapping_drive=mapping_drive,
    )


# ---------------------------------------------------------------------------
# Map building
# ---------------------------------------------------------------------------

@dataclass
class MapBuildResult:
    grid: OccupancyGrid
    pose_log: list[tuple[float, Pose2, Pose2]]
    match_failure_rate: float
    reliable: bool


def build_map(
    world: ObstacleWorld,
    drive: tuple[MappingLeg, ...],
    grid_spec: GridSpec,
    lidar: LidarConfig,
    plant: PlantParams,
    start: Pose2,
) -> MapBuildResult:
    """Drive the plant along the scripted legs while scan-matching and
    integrating each observation into a fresh grid.

    The map is flagged unreliable when more than 10% of matches fail.
    """
    grid = OccupancyGrid.from_spec(grid_spec)
    source = SlamPoseSource(
        world, grid, start,
        n_beams=lidar.n_beams, fov=lidar.fov, max_range=lidar.max_range,
        integrate_motion=0.1, integrate_rotation=0.1,
    )
    state = PlantState(pose=start, v=0.0)
    log: list[tuple[float, Pose2, Pose2]] = []
    t = 0.0
    for leg in drive:
        u = Control(accel=leg.accel, brake=leg.brake, steer=leg.steer, gear=leg.gear)
        for _ in range(int(round(leg.duration / plant.dt))):
            est = source.observe(state, t)
            log.append((t, state.pose, est))
            state = step_plant(state, u, plant.dt, plant)
            t += plant.dt
    est = source.observe(state, t)
    log.append((t, state.pose, est))
    rate = source.failure_rate
    return MapBuildResult(grid=grid, pose_log=log, match_failure_rate=rate,
                          reliable=rate <= 0.10)


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------

@dataclass
class SeedArtifacts:
    seed: int
    plan: Plan | None
    tree_rows: list[tuple]
    trace: Trace | None


@dataclass
class Report:
    """Deterministic per-seed outcomes plus aggregate statistics.

    Wall times live in `timing`, which is kept out of the deterministic
    report document.
    """

    scenario_name: str
    mode: str
    goal: list[float]
    threshold: float
    rows: list[dict]
    aggregate: dict
    notes: list[str]
    map_failure_rate: float | None = None
    map_reliable: bool | None = None
    timing: dict = field(default_factory=dict)


def report_to_dict(report: Report) -> dict:
    """The deterministic report document (no timing)."""
    doc = {
        "format": REPORT_FORMAT,
        "scenario": report.scenario_name,
        "mode": report.mode,
        "goal": report.goal,
        "goal_threshold": report.threshold,
        "rows": report.rows,
        "aggregate": report.aggregate,
        "notes": report.notes,
    }
    if report.map_failure_rate is not None:
        doc["map"] = {
            "match_failure_rate": report.map_failure_rate,
            "reliable": report.map_reliable,
        }
    return doc


def _config_list(z: Configuration) -> list[float]:
    return [z.x, z.y, z.theta, z.v]


def run_scenario(
    scenario: Scenario,
    mode: str = "plan_and_track",
    seeds: tuple[int, ...] = (0,),
    strict_unknown: bool = False,
    prebuilt_map: OccupancyGrid | None = None,
) -> tuple[Report, list[SeedArtifacts], OccupancyGrid | None]:
    """Run the full pipeline over a list of seeds.

    For mapped scenarios the map is built once (or ingested) and each seed
    plans against it; tracking with SLAM feedback updates a per-seed copy so
    seeds stay independent. Planner failures are recorded per seed, never
    fatal.
    """
    if mode not in ("plan_only", "plan_and_track"):
        raise ValueError(f"unknown mode {mode!r}")
    primitives = generate_standard_set(
        scenario.plant, target_speed=scenario.target_speed,
        arc_length=scenario.primitive_arc_length,
        steer_magnitude=scenario.steer_magnitude,
    )

    map_rate = None
    map_reliable = None
    base_grid: OccupancyGrid | None = None
    if scenario.checker_variant == "mapped":
        if prebuilt_map is not None:
            base_grid = prebuilt_map
        else:
            built = build_map(scenario.world, scenario.mapping_drive, scenario.grid_spec,
                              scenario.lidar, scenario.plant, scenario.start.pose())
            base_grid = built.grid
            map_rate = built.match_failure_rate
            map_reliable = built.reliable
        checker = MappedCollisionChecker(base_grid, scenario.footprint,
                                         scenario.epsilon, strict_unknown)
    else:
        checker = VirtualCollisionChecker(scenario.world, scenario.footprint,
                                          scenario.epsilon)

    rows: list[dict] = []
    artifacts: list[SeedArtifacts] = []
    timing: dict = {}
    for seed in seeds:
        params = replace(scenario.planner, seed=seed)
        t0 = time.perf_counter()
        growth = grow(scenario.start, scenario.goal, primitives, checker, params)
        plan_wall = time.perf_counter() - t0
        found: Plan | None = None
        if growth.goal_leaf is not None:
            found = tree_search(growth.tree, growth.goal_leaf)
            found.iterations = growth.iterations
            found.goal_distance = distance(found.final_configuration(), scenario.goal)

        row = {
            "seed": seed,
            "plan": None,
            "tracking": None,
        }
        trace: Trace | None = None
        track_wall = None
        if found is not None:
            row["plan"] = {
                "success": True,
                "iterations": found.iterations,
                "tree_size": found.tree_size,
                "waypoints": found.waypoint_count,
                "segments": len(found.segments),
                "goal_distance": found.goal_distance,
                "final": _config_list(found.final_configuration()),
            }
            if mode == "plan_and_track" and found.segments:
                t1 = time.perf_counter()
                if scenario.tracking_feedback == "slam":
                    live = base_grid.copy()
                    source = SlamPoseSource(
                        scenario.world, live, scenario.start.pose(),
                        n_beams=scenario.lidar.n_beams, fov=scenario.lidar.fov,
                        max_range=scenario.lidar.max_range, bootstrapped=True,
                    )
                else:
                    source = TruthPoseSource()
                tracker = replace(scenario.tracker, target_speed=scenario.target_speed)
                trace = track(found, primitives, scenario.plant, source, tracker)
                track_wall = time.perf_counter() - t1
                row["tracking"] = {
                    "completed": not trace.failed,
                    "note": trace.note,
                    "final_true": _config_list(trace.final_true),
                    "final_est": _config_list(trace.final_est),
                    "drift": drift(trace.final_true, scenario.goal),
                    "drift_est": drift(trace.final_est, scenario.goal),
                    "steps": len(trace),
                }
        else:
            row["plan"] = {
                "success": False,
                "iterations": growth.iterations,
                "tree_size": len(growth.tree),
            }
        rows.append(row)
        timing[str(seed)] = {"plan_seconds": plan_wall, "track_seconds": track_wall}
        artifacts.append(SeedArtifacts(seed=seed, plan=found,
                                       tree_rows=tree_to_rows(growth.tree), trace=trace))

    n_success = sum(1 for r in rows if r["plan"]["success"])
    aggregate = {
        "seeds": len(rows),
        "plan_successes": n_success,
        "plan_success_rate": n_success / len(rows) if rows else 0.0,
    }
    tracked = [r for r in rows if r["tracking"] is not None]
    if tracked:
        drifts = [r["tracking"]["drift"] for r in tracked if r["tracking"]["completed"]]
        aggregate["tracking_completed"] = sum(1 for r in tracked if r["tracking"]["completed"])
        if drifts:
            aggregate["mean_drift"] = float(np.mean(drifts))
            aggregate["max_drift"] = float(np.max(drifts))

    report = Report(
        scenario_name=scenario.name,
        mode=mode,
        goal=_config_list(scenario.goal),
        threshold=scenario.planner.goal_threshold,
        rows=rows,
        aggregate=aggregate,
        notes=[
            "drift = 0.2 * euclidean position error + 0.8 * SO(2) heading error",
            "wall times are reported separately in timing.json",
        ],
        map_failure_rate=map_rate,
        map_reliable=map_reliable,
        timing=timing,
    )
    return report, artifacts, base_grid


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def _float_csv(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def emit_outputs(
    report: Report,
    artifacts: list[SeedArtifacts],
    out_dir: str | Path,
    grid: OccupancyGrid | None = None,
) -> list[Path]:
    """Write the report, timing, map, and per-seed plan/trace/tree files.

    Everything except timing.json is bit-reproducible from (scenario, seed).
    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report_to_dict(report), indent=1))
    written.append(report_path)

    timing_path = out / "timing.json"
    timing_path.write_text(json.dumps({"format": "kinonav-timing/1",
                                       "seeds": report.timing}, indent=1))
    written.append(timing_path)

    if grid is not None:
        map_path = out / "map.pgm"
        save_map(grid, map_path)
        written.extend([map_path, Path(str(map_path) + ".yaml")])

    for art in artifacts:
        if art.plan is not None:
            plan_path = out / f"plan_{art.seed}.json"
            save_plan(art.plan, plan_path)
            written.append(plan_path)
        tree_path = out / f"tree_{art.seed}.csv"
        lines = ["node_id,parent_id,x,y,theta,primitive,fraction"]
        for row in art.tree_rows:
            lines.append(",".join(_float_csv(v) for v in row))
        tree_path.write_text("\n".join(lines) + "\n")
        written.append(tree_path)
        if art.trace is not None:
            trace_path = out / f"trace_{art.seed}.csv"
            save_trace(art.trace, trace_path)
            written.append(trace_path)
    return written


__all__ = [
    "LidarConfig", "MappingLeg", "Scenario", "load_scenario",
    "MapBuildResult", "build_map", "SeedArtifacts", "Report",
    "report_to_dict", "run_scenario", "emit_outputs",
    "SCENARIO_FORMAT", "REPORT_FORMAT",
]
