#!/usr/bin/env python3
"""
Command-line front end for conelab.

Every command writes a run directory holding its data files, a summary.json
and a manifest.json with content digests. Exit codes: 0 ok, 1 usage or
error, 2 flagged invariants, 3 shooting failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import pandas as pd

from conelab import SCHEMA_VERSION
from conelab.config import Config
from conelab.errors import BracketError, ConeLabError, ConfigError
from conelab.integrator import IntegratorConfig
from conelab.jobs.sweep import run_sweep, sweep_columns
from conelab.jobs.verify import run_verification
from conelab.models import RunConfig
from conelab.schemas import load_run_config
from conelab.services.asymptotics import extract_sigma
from conelab.services.shooting_service import ShootingService
from conelab.services.trajectory_service import run_trajectory
from conelab.subsystem import saddle_eigen, unstable_trajectory
from conelab.utils.io import (
    bracket_frame,
    default_run_dir,
    finish_manifest,
    start_manifest,
    subsystem_frame,
    summary_dict,
    trajectory_frame,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2
EXIT_SHOOTING = 3


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError('--config is required for this command', 'config')
    run = load_run_config(args.config)
    options = run.options
    if args.floor is not None:
        if not 0 < args.floor < 1:
            raise ConfigError(f'--floor must lie in (0, 1), got {args.floor}', 'floor')
        options = replace(options, floor=args.floor)
    if args.tol is not None:
        if args.command == 'shoot':
            run.shoot_tol = args.tol
        else:
            integ = options.integrator.to_dict()
            integ['rel_tol'] = args.tol
            options = replace(options, integrator=IntegratorConfig(**integ))
    run.options = options
    return run


def _echo(args, run: Optional[RunConfig]) -> dict:
    """Config echo for the manifest; CLI overrides are part of the run identity."""
    echo = dict(run.raw) if run else {}
    echo['cli'] = {'floor': args.floor, 'tol': args.tol}
    if args.command == 'subsystem':
        echo['cli'].update({'d': args.d, 'offset': args.offset})
    if args.command == 'sweep':
        echo['cli']['grid'] = args.grid
    return echo


def _run_dir(args, run: Optional[RunConfig], echo: dict) -> Path:
    if args.out:
        path = Path(args.out)
    elif run is not None and run.output_dir:
        path = Path(run.output_dir)
    else:
        path = default_run_dir(args.command, echo, Config.OUTPUT_ROOT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_integrate(args, run: RunConfig, out: Path) -> tuple:
    if run.seed is None:
        raise ConfigError('integrate needs a seed block', 'seed')
    record = run_trajectory(run.problem, run.seed, run.options)
    report = None
    try:
        report = extract_sigma(record)
    except ConeLabError as e:
        logger.info("Cone extraction skipped: %s", e.message)

    files = [
        write_csv(trajectory_frame(record, run.stride), out / 'trajectory.csv'),
        write_json(summary_dict(record, report), out / 'summary.json'),
    ]
    print(f"{record.classification} trajectory, {len(record)} samples, status {record.status}")
    if report is not None:
        print(f"sigma = {report.sigma}")
    return files, EXIT_FLAGGED if record.flags else EXIT_OK


def cmd_shoot(args, run: RunConfig, out: Path) -> tuple:
    if run.target is None:
        raise ConfigError('shoot needs a target block', 'target')
    block = run.raw.get('target', {})
    service = ShootingService(
        options=run.options,
        tol=run.shoot_tol,
        max_evaluations=block.get('max_evaluations', Config.MAX_EVALUATIONS),
        workers=args.workers,
    )
    try:
        result = service.realize_cone(run.problem, run.target, run.shoot_tol,
                                      fbar0=run.target_fbar)
    except BracketError as e:
        samples = (e.details or {}).get('samples', [])
        frame = pd.DataFrame(samples, columns=list(bracket_frame([]).columns))
        files = [write_csv(frame, out / 'bracket.csv')]
        logger.error("Shooting failed: %s", e.message)
        print(f"Error: {e.message}", file=sys.stderr)
        return files, EXIT_SHOOTING

    files = [write_csv(bracket_frame(result.history), out / 'bracket.csv')]
    summary = {'schema_version': SCHEMA_VERSION, 'target': run.target.to_dict(),
               'shoot': result.to_dict()}
    if result.record is not None:
        files.append(write_csv(trajectory_frame(result.record, run.stride),
                               out / 'trajectory.csv'))
        summary['verification'] = summary_dict(result.record, result.achieved)
    files.append(write_json(summary, out / 'summary.json'))

    print(f"shoot {result.status}: C={result.params.C:.12g} fbar={list(result.params.fbar)} "
          f"after {result.iterations} evaluations")
    if not result.converged:
        return files, EXIT_SHOOTING
    return files, EXIT_FLAGGED if result.flags else EXIT_OK


def cmd_sweep(args, run: RunConfig, out: Path) -> tuple:
    if run.seed is None:
        raise ConfigError('sweep needs a seed block for fbar', 'seed')
    grid = args.grid if args.grid else run.sweep_grid
    if not grid:
        raise ConfigError('sweep needs a C grid (--grid or sweep.C)', 'sweep.C')
    if any(not c < 0 for c in grid):
        raise ConfigError('sweep grid values must be negative', 'sweep.C')
    frame = run_sweep(run.problem, run.seed.fbar, grid, run.options, workers=args.workers)
    bad = int((frame['status'] != 'accepted').sum())
    files = [
        write_csv(frame[sweep_columns(run.problem.r)], out / 'sweep.csv'),
        write_json({'schema_version': SCHEMA_VERSION, 'problem': run.problem.to_dict(),
                    'fbar': list(run.seed.fbar), 'rows': len(frame), 'not_accepted': bad},
                   out / 'summary.json'),
    ]
    print(f"sweep: {len(frame)} rows, {bad} not accepted")
    return files, EXIT_FLAGGED if bad else EXIT_OK


def cmd_subsystem(args, run: Optional[RunConfig], out: Path) -> tuple:
    traj = unstable_trajectory(args.d, args.offset)
    eig_data = saddle_eigen(args.d)
    limits = traj.limits()
    summary = {
        'schema_version': SCHEMA_VERSION,
        'd': args.d,
        'offset': args.offset,
        'eigenvalues': list(eig_data.closed_form),
        'unstable_vector': eig_data.unstable_vector,
        'terminal_event': traj.event,
        'samples': len(traj.s),
        'limits': limits,
        'flags': traj.flags,
    }
    files = [
        write_csv(subsystem_frame(traj, run.stride if run else 1), out / 'trajectory.csv'),
        write_json(summary, out / 'summary.json'),
    ]
    print(f"subsystem d={args.d}: X/Y^2 -> {limits['ratio_limit']:.10g}")
    return files, EXIT_FLAGGED if traj.flags else EXIT_OK


def cmd_verify(args, run: RunConfig, out: Path) -> tuple:
    if run.seed is None:
        raise ConfigError('verify needs a seed block', 'seed')
    report = run_verification(run.problem, run.seed, run.options)
    print(report.table())
    files = [write_json({'schema_version': SCHEMA_VERSION, **report.to_dict()},
                        out / 'verify.json')]
    return files, EXIT_OK if report.passed else EXIT_FLAGGED


COMMANDS = {
    'integrate': cmd_integrate,
    'shoot': cmd_shoot,
    'sweep': cmd_sweep,
    'subsystem': cmd_subsystem,
    'verify': cmd_verify,
}


def _grid(text: str) -> list:
    try:
        return [float(x) for x in text.split(',') if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f'invalid C grid {text!r}') from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration (JSON)")
    common.add_argument("--out", help="Run directory (default: derived from the config digest)")
    common.add_argument(
        "--workers",
        type=int,
        default=Config.WORKERS,
        help="Worker processes for sweeps and bracket expansion (default: %(default)s)"
    )
    common.add_argument("--floor", type=float, help="L-floor that ends regular trajectories")
    common.add_argument(
        "--tol",
        type=float,
        help="Integrator rel_tol; for shoot, the relative sigma tolerance"
    )
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="conelab",
        description="Expanding Ricci soliton cone laboratory",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  conelab integrate --config configs/r3xs1.json --out runs/r3xs1
  conelab shoot --config configs/cone.json --workers 4
  conelab sweep --config configs/sweep.json --grid=-0.5,-1,-4,-16
  conelab subsystem --d 2 --offset 1e-8
  conelab verify --config configs/einstein.json --verbose
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("integrate", parents=[common], help="Integrate one trajectory")
    sub.add_parser("shoot", parents=[common], help="Realize a target cone")
    sweep = sub.add_parser("sweep", parents=[common], help="Tabulate sigma over a C grid")
    sweep.add_argument("--grid", type=_grid, help="Comma-separated C values")
    subsystem = sub.add_parser("subsystem", parents=[common],
                               help="Unstable branch of the planar limit system")
    subsystem.add_argument("--d", type=int, default=2, help="Sphere dimension (default: 2)")
    subsystem.add_argument(
        "--offset",
        type=float,
        default=Config.SUBSYSTEM_OFFSET,
        help="Distance from the saddle along the unstable direction (default: %(default)s)"
    )
    sub.add_parser("verify", parents=[common], help="Run the invariant suite")
    return parser


def main(argv=None) -> int:
    """Main entry point for the conelab CLI."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR

    level = logging.DEBUG if args.verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stdout
    )

    run = None
    out = None
    manifest = None
    files = []
    code = EXIT_ERROR
    try:
        if args.command != 'subsystem' or args.config:
            run = _load(args)
        echo = _echo(args, run)
        out = _run_dir(args, run, echo)
        manifest = start_manifest(args.command, echo)
        logger.info("Starting %s in %s", args.command, out)
        files, code = COMMANDS[args.command](args, run, out)
    except ConeLabError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        print(f"Error: {e.message}", file=sys.stderr)
        code = e.exit_code

    if manifest is not None and out is not None:
        status = {EXIT_OK: 'ok', EXIT_FLAGGED: 'flagged', EXIT_SHOOTING: 'shooting-failure'}
        finish_manifest(manifest, out, files, status.get(code, 'error'), code)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
