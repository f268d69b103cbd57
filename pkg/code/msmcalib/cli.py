# Copyright 2025 The msmcalib Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""
Command-line front end.

Subcommands:
- schedule:   write the projection schedule JSON.
- simulate:   write a synthetic scene JSON (optionally detections as JSON lines).
- calibrate:  scene or detections -> reconstruction JSON.
- evaluate:   reconstruction + ground-truth scene (+ the detections it was
              calibrated from) -> report JSON (and table).
- montecarlo: noise sweep over scenarios -> CSV/XLSX report (and summary).

Exit codes: 0 success, 1 data error (a JSON object {"error", "message"} is
printed on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__, storage
from .config import load_config
from .errors import CalibrationError, ConfigError
from .evaluation import evaluate
from .msm import ScaleSet, fuse_detections, generate_schedule
from .simulator import Scenario, run_monte_carlo, simulate_detections, simulate_scene, summarize_monte_carlo
from .solver import calibrate

logger = logging.getLogger(__name__)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _scenarios(text):
    if text == "all":
        return tuple(s.value for s in Scenario)
    try:
        return tuple(Scenario(v.strip()).value for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
    common.add_argument("--config", default=None, help="RunConfig JSON file")
    common.add_argument("--out", default=None, help="output file")
    common.add_argument("--threads", type=int, default=None, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(prog="msmcalib", description="Projector marker multi-camera calibration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="write a projection schedule")
    p.add_argument("--arrays", type=int)
    p.add_argument("--per-array", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--scales", type=_floats)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic scene")
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.add_argument("--sigma", type=float)
    p.add_argument("--closeup", action="store_true", default=None, help="add the close-up camera")
    p.add_argument("--heldout", action="store_true", help="also simulate held-out correspondences")
    p.add_argument("--detections", default=None, help="also write per-scale detections (JSON lines)")

    p = sub.add_parser("calibrate", parents=[common], help="calibrate a rig")
    p.add_argument("--scene", default=None, help="scene JSON with cameras and observations")
    p.add_argument("--detections", default=None, help="detections JSON lines")
    p.add_argument("--cameras", default=None, help="JSON with the camera intrinsics (scene format)")
    p.add_argument("--schedule", default=None, help="schedule JSON to validate detection step ids")
    p.add_argument("--coplanar", action="store_true", default=None, help="constrain points to a plane")
    p.add_argument("--loss", choices=["linear", "huber"])

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a reconstruction")
    p.add_argument("--reconstruction", required=True)
    p.add_argument("--scene", required=True, help="ground-truth scene JSON")
    p.add_argument("--detections", default=None, help="detections JSON lines the reconstruction was calibrated from")
    p.add_argument("--schedule", default=None, help="schedule JSON to validate detection step ids")
    p.add_argument("--table", default=None, help="per-camera table (.csv or .xlsx)")

    p = sub.add_parser("montecarlo", parents=[common], help="noise sweep")
    p.add_argument("--trials", type=int)
    p.add_argument("--sigmas", type=_floats)
    p.add_argument("--scenarios", type=_scenarios)
    p.add_argument("--summary", default=None, help="aggregated curves (.csv or .xlsx)")
    return parser


def _require(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def cmd_schedule(args, config):
    config = config.override(
        **{
            "schedule.arrays": args.arrays,
            "schedule.per_array": args.per_array,
            "schedule.rows": args.rows,
            "schedule.cols": args.cols,
            "schedule.scales": args.scales,
        }
    )
    sc = config.schedule
    schedule = generate_schedule(
        sc.grid(),
        sc.arrays,
        sc.per_array,
        ScaleSet(sc.scales),
        sc.pattern_side,
        (sc.projector_width, sc.projector_height),
        sc.step_duration,
    )
    out = _require(config.paths.out, "--out")
    storage.write_schedule(out, schedule, config.to_dict(), config.seed)
    print("=== schedule ===")
    print(f"... steps = {len(schedule)}")
    print(f"... markers = {len(schedule.marker_centers())}")
    print(f"... duration = {schedule.duration:.1f} s")
    return 0


def cmd_simulate(args, config):
    config = config.override(**{"scenario.scenario": args.scenario, "scenario.sigma": args.sigma, "scenario.closeup": args.closeup})
    scene = simulate_scene(config.scenario, config.seed, heldout=args.heldout)
    out = _require(config.paths.out, "--out")
    storage.write_scene(out, scene, config.to_dict())
    if args.detections:
        sc = config.schedule
        schedule = generate_schedule(
            sc.grid(), sc.arrays, sc.per_array, ScaleSet(config.scenario.scales), sc.pattern_side,
            (sc.projector_width, sc.projector_height), sc.step_duration,
        )
        detections = simulate_detections(scene, schedule, seed=config.seed)
        storage.write_detections(args.detections, detections)
    print("=== synthetic scene ===")
    print(f"... scenario = {scene.config.scenario.value}")
    print(f"... cameras = {len(scene.rig)}")
    print(f"... points = {len(scene.points)}")
    print(f"... observations = {len(scene.observations)}")
    print(f"... mean track length = {scene.observations.track_lengths().mean():.2f}")
    return 0


def cmd_calibrate(args, config):
    config = config.override(
        **{
            "paths.scene": args.scene,
            "paths.detections": args.detections,
            "paths.schedule": args.schedule,
            "solver.coplanar": args.coplanar,
            "solver.loss": args.loss,
            "solver.seed": config.seed,
        }
    )
    paths = config.paths
    if paths.detections:
        cameras = storage.read_scene(_require(args.cameras or paths.scene, "--cameras"))
        schedule = storage.read_schedule(paths.schedule) if paths.schedule else None
        observations = fuse_detections(storage.read_detections(paths.detections), schedule)
        intrinsics = cameras.rig.intrinsics()
    else:
        scene = storage.read_scene(_require(paths.scene, "--scene or --detections"))
        observations = scene.observations
        intrinsics = scene.rig.intrinsics()
    recon = calibrate(observations, intrinsics, config.solver)
    out = _require(paths.out, "--out")
    storage.write_reconstruction(out, recon, config.to_dict(), config.seed)

    table = recon.camera_table()
    print("=== calibration results ===")
    print(f"... registered cameras = {len(recon.poses)} / {len(table)}")
    print(f"... points = {len(recon.points)}")
    print(f"... reprojection RMS = {recon.reprojection_rms():.4f} px")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_evaluate(args, config):
    scene = storage.read_scene(args.scene)
    observations = scene.observations
    if args.detections:
        schedule = storage.read_schedule(args.schedule) if args.schedule else None
        observations = fuse_detections(storage.read_detections(args.detections), schedule)
    data = storage.read_json(args.reconstruction)
    recon = storage.reconstruction_from_dict(
        data, observations, scene.rig.intrinsics(), config.solver.triangulation_max_error
    )
    report = evaluate(recon, scene.rig, heldout=scene.heldout, true_points=scene.true_points())
    out = _require(config.paths.out, "--out")
    payload = report.to_dict()
    payload["run"] = storage.run_block(config.to_dict(), config.seed)
    storage.write_json(out, payload)
    if args.table:
        storage.write_table(args.table, report.cameras, config.to_dict(), config.seed)

    print("=== evaluation results ===")
    for key, value in report.summary().items():
        print(f"... {key} = {value:.6g}" if isinstance(value, float) else f"... {key} = {value}")
    label = "held-out" if scene.heldout is not None else "calibration"
    print(f"=== success rate ({label}) ===")
    print("threshold [px] " + " ".join(f"{t:>6g}" for t in report.success))
    print("cameras [%]    " + " ".join(f"{v:>6d}" for v in report.success.values()))
    return 0


def cmd_montecarlo(args, config):
    config = config.override(
        **{
            "montecarlo.trials": args.trials,
            "montecarlo.sigmas": args.sigmas,
            "montecarlo.scenarios": args.scenarios,
        }
    )
    mc = config.montecarlo
    report = run_monte_carlo(
        config.scenario,
        sigmas=mc.sigmas,
        trials=mc.trials,
        scenarios=mc.scenarios,
        base_seed=config.seed,
        threads=config.threads,
        options=config.solver,
    )
    out = _require(config.paths.out, "--out")
    storage.write_table(out, report, config.to_dict(), config.seed)
    summary = summarize_monte_carlo(report)
    summary_path = args.summary or config.paths.summary
    if summary_path:
        storage.write_table(summary_path, summary, config.to_dict(), config.seed)
    print("=== Monte-Carlo results ===")
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    return 0


COMMANDS = {
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "montecarlo": cmd_montecarlo,
}


def dispatch(argv=None):
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config).override(seed=args.seed, threads=args.threads, **{"paths.out": args.out})
        return COMMANDS[args.command](args, config)
    except (CalibrationError, ConfigError, OSError, ValueError, KeyError) as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())
