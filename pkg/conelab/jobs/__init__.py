"""
Batch jobs for conelab.

This package contains the long-running jobs behind the CLI:
- sweep: sigma(C) table over a grid of C values
- verify: invariant suite over one configured trajectory
"""

from conelab.jobs.sweep import run_sweep
from conelab.jobs.verify import run_verification

__all__ = [
    'run_sweep',
    'run_verification'
]
