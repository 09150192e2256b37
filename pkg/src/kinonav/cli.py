"""Command-line harness for the navigation pipeline.

Subcommands:
  map    build the occupancy map for a mapped scenario and export it
  plan   plan only, over one or more seeds
  track  plan and track, over one or more seeds
  run    full pipeline (alias of track with explicit --mode)

Exit codes: 0 on success, 1 when the scenario fails (no plan, failed
tracking, or unreliable map), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .grid import save_map
from .pipeline import build_map, emit_outputs, load_scenario, run_scenario

EXIT_OK = 0
EXIT_SCENARIO_FAILURE = 1
EXIT_USAGE = 2


def _parse_seeds(args: argparse.Namespace) -> tuple[int, ...]:
    if args.seeds:
        lo, _, hi = args.seeds.partition("..")
        try:
            return tuple(range(int(lo), int(hi) + 1))
        except ValueError:
            raise SystemExit(EXIT_USAGE)
    return (args.seed,)


def _add_common(parser: argparse.ArgumentParser, with_seeds: bool = True) -> None:
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--out", default=None, help="output directory for artifacts")
    if with_seeds:
        parser.add_argument("--seed", type=int, default=0, help="single seed (default 0)")
        parser.add_argument("--seeds", default=None,
                            help="inclusive seed range, e.g. 0..99 (overrides --seed)")
        parser.add_argument("--strict-unknown", action="store_true",
                            help="treat unexplored map cells as obstacles")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kinonav",
                                     description="occupancy-grid SLAM + motion-primitive "
                                                 "RRT navigation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_map = sub.add_parser("map", help="build and export the scenario map")
    _add_common(p_map, with_seeds=False)

    p_plan = sub.add_parser("plan", help="plan only")
    _add_common(p_plan)

    p_track = sub.add_parser("track", help="plan and track")
    _add_common(p_track)

    p_run = sub.add_parser("run", help="full pipeline with explicit mode")
    _add_common(p_run)
    p_run.add_argument("--mode", choices=["plan_only", "plan_and_track"],
                       default="plan_and_track")

    args = parser.parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "map":
        if scenario.checker_variant != "mapped":
            print("error: scenario has no mapping stage", file=sys.stderr)
            return EXIT_USAGE
        result = build_map(scenario.world, scenario.mapping_drive, scenario.grid_spec,
                           scenario.lidar, scenario.plant, scenario.start.pose())
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        save_map(result.grid, out / "map.pgm")
        print(f"map written to {out / 'map.pgm'} "
              f"(match failure rate {result.match_failure_rate:.3f})")
        return EXIT_OK if result.reliable else EXIT_SCENARIO_FAILURE

    mode = {"plan": "plan_only", "track": "plan_and_track"}.get(args.command, None)
    if mode is None:
        mode = args.mode
    seeds = _parse_seeds(args)
    report, artifacts, grid = run_scenario(scenario, mode=mode, seeds=seeds,
                                           strict_unknown=args.strict_unknown)
    if args.out:
        emit_outputs(report, artifacts, args.out, grid)

    agg = report.aggregate
    print(f"{scenario.name}: {agg['plan_successes']}/{agg['seeds']} plans succeeded")
    if "tracking_completed" in agg:
        print(f"tracking completed for {agg['tracking_completed']} seeds; "
              f"mean drift {agg.get('mean_drift', float('nan')):.4f}")
    ok = agg["plan_successes"] == agg["seeds"]
    if mode == "plan_and_track" and agg.get("tracking_completed", 0) < agg["plan_successes"]:
        ok = False
    if report.map_reliable is False:
        ok = False
    return EXIT_OK if ok else EXIT_SCENARIO_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
