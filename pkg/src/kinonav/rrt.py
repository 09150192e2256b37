"""Kinodynamic RRT over motion primitives.

Grows a tree from the start configuration by repeatedly sampling the
configuration space, finding the nearest tree node under a weighted SE(2)
metric (goal-biased a fraction of the time), and extending that node with a
randomly chosen, randomly truncated motion primitive, keeping only
collision-free edges. Planning terminates as soon as a new node lands within
a metric threshold of the goal.

A planning run owns its tree and is single-threaded; independent runs with
different seeds may execute in parallel over shared read-only inputs.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import CollisionChecker
from .geometry import Pose2, wrap_angle, wrap_angles
from .primitives import PrimitiveSet

POSITION_WEIGHT = 0.2
HEADING_WEIGHT = 0.8


@dataclass(frozen=True)
class Configuration:
    """Vehicle configuration: position, yaw, and absolute speed."""

    x: float
    y: float
    theta: float
    v: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        if self.v < 0.0:
            raise ValueError(f"configuration speed must be >= 0, got {self.v}")

    def pose(self) -> Pose2:
        return Pose2(self.x, self.y, self.theta)


def so2_distance(theta1: float, theta2: float) -> float:
    """Geodesic distance on the circle, in [0, pi]."""
    d = abs(theta1 - theta2)
    return min(d, 2.0 * math.pi - d)


def distance(z1: Configuration, z2: Configuration) -> float:
    """Weighted planning metric: 0.2 x Euclidean position + 0.8 x SO(2) yaw.

    Speed does not participate.
    """
    return (POSITION_WEIGHT * math.hypot(z1.x - z2.x, z1.y - z2.y)
            + HEADING_WEIGHT * so2_distance(z1.theta, z2.theta))


@dataclass
class PlannerParams:
    """Planner knobs; sampling bounds are required per scenario."""

    x_bounds: tuple[float, float]
    y_bounds: tuple[float, float]
    goal_bias: float = 0.2
    goal_threshold: float = 0.2
    max_iterations: int = 5000
    min_truncation: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must be in [0, 1]")
        if self.goal_threshold <= 0.0:
            raise ValueError("goal_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.x_bounds[0] <= self.x_bounds[1] and self.y_bounds[0] <= self.y_bounds[1]):
            raise ValueError("sampling bounds must be ordered")


def sample(params: PlannerParams, rng: random.Random) -> Configuration:
    """Uniform configuration draw: x, y over the bounds, yaw over [-pi, pi),
    speed zero. Draw order is x, y, theta."""
    x = rng.uniform(*params.x_bounds)
    y = rng.uniform(*params.y_bounds)
    theta = rng.uniform(-math.pi, math.pi)
    return Configuration(x, y, theta, 0.0)


@dataclass(frozen=True)
class EdgeRecord:
    """How a node was reached: which primitive, how much of it, and the
    world-frame waypoints it swept."""

    primitive_id: str
    fraction: float
    waypoints: np.ndarray


@dataclass(frozen=True)
class TreeNode:
    config: Configuration
    parent: int | None = None
    edge: EdgeRecord | None = None


class Tree:
    """Append-only RRT tree with vectorized nearest-neighbour search."""

    def __init__(self, root: Configuration):
        self.nodes: list[TreeNode] = [TreeNode(config=root)]
        self._coords = np.zeros((16, 3))
        self._coords[0] = (root.x, root.y, root.theta)

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, config: Configuration, parent: int, edge: EdgeRecord) -> int:
        if not (0 <= parent < len(self.nodes)):
            raise IndexError(f"parent id {parent} out of range")
        node_id = len(self.nodes)
        self.nodes.append(TreeNode(config=config, parent=parent, edge=edge))
        if node_id >= len(self._coords):
            self._coords = np.vstack([self._coords, np.zeros_like(self._coords)])
        self._coords[node_id] = (config.x, config.y, config.theta)
        return node_id

    def nearest(self, z: Configuration) -> int:
        """Brute-force argmin of the metric; ties break to the lowest id."""
        if not self.nodes:
            raise ValueError("tree is empty")
        coords = self._coords[:len(self.nodes)]
        d = (POSITION_WEIGHT * np.hypot(coords[:, 0] - z.x, coords[:, 1] - z.y)
             + HEADING_WEIGHT * np.abs(wrap_angles(coords[:, 2] - z.theta)))
        return int(np.argmin(d))


def extend(
    tree: Tree,
    near_id: int,
    primitives: PrimitiveSet,
    rng: random.Random,
    checker: CollisionChecker,
    min_truncation: float = 0.1,
) -> tuple[Configuration, EdgeRecord] | None:
    """Try to grow from a node with a random, randomly truncated primitive.

    Draw order is primitive index then truncation fraction. Returns the new
    configuration (speed zero) and its edge, or None when the swept edge
    collides.
    """
    near = tree.nodes[near_id]
    index = rng.randrange(len(primitives))
    fraction = rng.uniform(min_truncation, 1.0)
    waypoints = primitives[index].truncated(fraction).placed_at(near.config.pose())
    if checker.edge_in_collision(waypoints):
        return None
    end = waypoints[-1]
    z_new = Configuration(float(end[0]), float(end[1]), float(end[2]), 0.0)
    return z_new, EdgeRecord(primitives[index].primitive_id, fraction, waypoints)


@dataclass
class GrowthResult:
    """Everything a planning run produced, whether or not it reached goal."""

    tree: Tree
    goal_leaf: int | None
    iterations: int
    goal_biased_iterations: int


def grow(
    z_init: Configuration,
    z_goal: Configuration,
    primitives: PrimitiveSet,
    checker: CollisionChecker,
    params: PlannerParams,
) -> GrowthResult:
    """Run the tree-growth loop.

    Every iteration draws a sample first, then with probability goal_bias
    aims the nearest-neighbour query at the goal instead of the sample (the
    unused sample still advances the rng, keeping seeds reproducible).
    Terminates when a new node lands within goal_threshold of the goal. A
    start already within the threshold returns immediately with a bare root.
    """
    if checker.config_in_collision(z_init.pose()):
        raise ValueError("start configuration is in collision")
    rng = random.Random(params.seed)
    tree = Tree(z_init)
    if distance(z_init, z_goal) <= params.goal_threshold:
        return GrowthResult(tree=tree, goal_leaf=0, iterations=0, goal_biased_iterations=0)

    goal_biased = 0
    for iteration in range(1, params.max_iterations + 1):
        z_rand = sample(params, rng)
        if params.goal_bias > rng.random():
            goal_biased += 1
            target = z_goal
        else:
            target = z_rand
        near_id = tree.nearest(target)
        grown = extend(tree, near_id, primitives, rng, checker, params.min_truncation)
        if grown is None:
            continue
        z_new, edge = grown
        new_id = tree.add(z_new, near_id, edge)
        if distance(z_new, z_goal) <= params.goal_threshold:
            return GrowthResult(tree=tree, goal_leaf=new_id, iterations=iteration,
                                goal_biased_iterations=goal_biased)
    return GrowthResult(tree=tree, goal_leaf=None, iterations=params.max_iterations,
                        goal_biased_iterations=goal_biased)


@dataclass
class PlanSegment:
    primitive_id: str
    fraction: float
    waypoints: np.ndarray


@dataclass
class Plan:
    """Primitive sequence from start to a goal-region node.

    A degenerate plan (start already within threshold) has no segments.
    """

    start: Configuration
    segments: list[PlanSegment] = field(default_factory=list)
    iterations: int = 0
    tree_size: int = 1
    goal_distance: float = math.nan

    @property
    def waypoint_count(self) -> int:
        return sum(len(s.waypoints) for s in self.segments)

    def final_configuration(self) -> Configuration:
        if not self.segments:
            return self.start
        end = self.segments[-1].waypoints[-1]
        return Configuration(float(end[0]), float(end[1]), float(end[2]), 0.0)

    def all_waypoints(self) -> np.ndarray:
        if not self.segments:
            return np.array([[self.start.x, self.start.y, self.start.theta]])
        return np.vstack([s.waypoints for s in self.segments])


def tree_search(tree: Tree, leaf_id: int) -> Plan:
    """Back-trace the parent chain from a leaf and return it in
    start-to-goal order."""
    if not (0 <= leaf_id < len(tree.nodes)):
        raise IndexError(f"leaf id {leaf_id} out of range")
    segments: list[PlanSegment] = []
    node_id: int | None = leaf_id
    while node_id is not None:
        node = tree.nodes[node_id]
        if node.edge is not None:
            segments.append(PlanSegment(node.edge.primitive_id, node.edge.fraction,
                                        node.edge.waypoints))
        node_id = node.parent
    segments.reverse()
    return Plan(start=tree.nodes[0].config, segments=segments, tree_size=len(tree))


def plan(
    z_init: Configuration,
    z_goal: Configuration,
    primitives: PrimitiveSet,
    checker: CollisionChecker,
    params: PlannerParams,
) -> Plan | None:
    """Full planning call: grow, then back-trace. None when the iteration
    budget runs out before reaching the goal region."""
    result = grow(z_init, z_goal, primitives, checker, params)
    if result.goal_leaf is None:
        return None
    found = tree_search(result.tree, result.goal_leaf)
    found.iterations = result.iterations
    found.goal_distance = distance(found.final_configuration(), z_goal)
    return found


def plan_in_collision(p: Plan, checker: CollisionChecker) -> bool:
    """Re-validate a plan against a checker, segment by segment."""
    if not p.segments:
        return checker.config_in_collision(p.start.pose())
    return any(checker.edge_in_collision(s.waypoints) for s in p.segments)


# ---------------------------------------------------------------------------
# Plan serialization
# ---------------------------------------------------------------------------

PLAN_FORMAT = "kinonav-plan/1"


def plan_to_dict(p: Plan) -> dict:
    return {
        "format": PLAN_FORMAT,
        "start": [p.start.x, p.start.y, p.start.theta, p.start.v],
        "segments": [
            {
                "primitive": s.primitive_id,
                "fraction": s.fraction,
                "waypoints": [[float(x), float(y), float(psi)] for x, y, psi in s.waypoints],
            }
            for s in p.segments
        ],
        "summary": {
            "iterations": p.iterations,
            "tree_size": p.tree_size,
            "goal_distance": p.goal_distance,
            "waypoint_total": p.waypoint_count,
        },
    }


def plan_from_dict(doc: dict) -> Plan:
    if doc.get("format") != PLAN_FORMAT:
        raise ValueError(f"unsupported plan format {doc.get('format')!r}")
    start = Configuration(*doc["start"])
    segments = [
        PlanSegment(
            primitive_id=entry["primitive"],
            fraction=float(entry["fraction"]),
            waypoints=np.asarray(entry["waypoints"], dtype=float),
        )
        for entry in doc["segments"]
    ]
    summary = doc.get("summary", {})
    return Plan(
        start=start,
        segments=segments,
        iterations=int(summary.get("iterations", 0)),
        tree_size=int(summary.get("tree_size", 1)),
        goal_distance=float(summary.get("goal_distance", math.nan)),
    )


def save_plan(p: Plan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(p), indent=1))


def load_plan(path: str | Path) -> Plan:
    return plan_from_dict(json.loads(Path(path).read_text()))


def tree_to_rows(tree: Tree) -> list[tuple]:
    """Flatten a tree for export: one (id, parent, x, y, theta, primitive,
    fraction) row per node."""
    rows = []
    for node_id, node in enumerate(tree.nodes):
        rows.append((
            node_id,
            -1 if node.parent is None else node.parent,
            node.config.x, node.config.y, node.config.theta,
            node.edge.primitive_id if node.edge else "",
            node.edge.fraction if node.edge else 0.0,
        ))
    return rows


__all__ = [
    "Configuration", "so2_distance", "distance", "PlannerParams", "sample",
    "EdgeRecord", "TreeNode", "Tree", "extend", "GrowthResult", "grow",
    "PlanSegment", "Plan", "tree_search", "plan", "plan_in_collision",
    "plan_to_dict", "plan_from_dict", "save_plan", "load_plan",
    "tree_to_rows", "PLAN_FORMAT", "POSITION_WEIGHT", "HEADING_WEIGHT",
]
