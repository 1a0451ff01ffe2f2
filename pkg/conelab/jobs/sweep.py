"""
Sweep job: cone data over a grid of C values.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import pandas as pd

from conelab.errors import ConeLabError
from conelab.models import ProblemSpec, SeedParams, TrajectoryOptions
from conelab.services.asymptotics import extract_sigma
from conelab.services.trajectory_service import run_trajectory

logger = logging.getLogger(__name__)


def sweep_columns(r: int) -> list:
    return (['C'] + [f'sigma{i}' for i in range(1, r + 1)]
            + ['scal_limit', 'cone_scal_coeff', 'status', 'flags'])


def sweep_row(spec: ProblemSpec, fbar: tuple, C: float, options: TrajectoryOptions) -> dict:
    """One row of the sweep table; failures are recorded in the row."""
    row = {'C': C}
    try:
        record = run_trajectory(spec, SeedParams(fbar=fbar, C=C), options)
        report = extract_sigma(record)
    except ConeLabError as e:
        logger.warning("Sweep point C=%g failed: %s", C, e.message)
        row.update({f'sigma{i}': math.nan for i in range(1, spec.r + 1)})
        row.update({'scal_limit': math.nan, 'cone_scal_coeff': math.nan,
                    'status': 'error', 'flags': e.message})
        return row
    row.update({f'sigma{i}': s for i, s in enumerate(report.sigma, start=1)})
    flags = record.flags + report.flags
    row.update({
        'scal_limit': report.scal_limit,
        'cone_scal_coeff': report.cone_scal_coeff,
        'status': 'flagged' if flags else 'accepted',
        'flags': '; '.join(flags),
    })
    return row


def _row_job(args: tuple) -> dict:
    return sweep_row(*args)


def run_sweep(spec: ProblemSpec, fbar, grid, options: Optional[TrajectoryOptions] = None,
              workers: int = 1) -> pd.DataFrame:
    """
    Compute sigma and the scalar curvature limit for every C in ``grid``.

    Rows come back in grid order whatever the worker count.

    Args:
        spec: Problem specification
        fbar: Fixed (fbar_2, ..., fbar_r)
        grid: C values, all negative
        options: Trajectory options
        workers: Process pool size; 1 runs in-process

    Returns:
        DataFrame with the sweep.csv columns
    """
    options = options or TrajectoryOptions.from_config()
    jobs = [(spec, tuple(fbar), float(C), options) for C in grid]
    logger.info("Starting sweep over %d values of C with %d worker(s)", len(jobs), workers)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_row_job, jobs))
    else:
        rows = [_row_job(job) for job in jobs]

    frame = pd.DataFrame(rows, columns=sweep_columns(spec.r))
    failed = int((frame['status'] == 'error').sum())
    if failed:
        logger.error("Sweep finished with %d failed point(s)", failed)
    else:
        logger.info("Sweep complete: %d rows", len(frame))
    return frame
