"""2D autonomous-vehicle navigation toolkit.

Occupancy-grid SLAM via Gauss-Newton scan matching, kinodynamic RRT planning
over recorded motion primitives, dual collision checking, and closed-loop
PID waypoint tracking against a simulated vehicle plant, with a scenario
runner for reverse-navigation and parking experiments.
"""

from .geometry import Point2, Pose2, se2_apply, se2_compose, wrap_angle
from .sim import (Control, Gear, LidarScan, ObstacleWorld, PlantParams, PlantState,
                  ray_cast, scan_world, step_plant, steering_command_to_wheel_angle)
from .grid import CellState, OccupancyGrid, load_map, save_map
from .scan_matching import MatchResult, gauss_newton_step, jacobian_row, match_scan
from .primitives import (MotionPrimitive, PrimitiveSet, generate_standard_set,
                         record_primitive)
from .collision import (MappedCollisionChecker, VehicleFootprint,
                        VirtualCollisionChecker, footprint_points)
from .rrt import (Configuration, Plan, PlannerParams, Tree, distance, plan,
                  so2_distance, tree_search)
from .tracking import (SlamPoseSource, SpeedPid, Trace, TrackerParams,
                       TruthPoseSource, drift, plan_to_segments, track)
from .pipeline import Scenario, build_map, emit_outputs, load_scenario, run_scenario

__version__ = "0.1.0"
