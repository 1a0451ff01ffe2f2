"""Pytest configuration and fixtures for conelab tests."""

import json
import pytest
import sys
from dataclasses import replace
from pathlib import Path

# Add repository root to path so the package imports without installation
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from conelab.config import TestingConfig
from conelab.models import ProblemSpec, SeedParams, TrajectoryOptions
from conelab.services.trajectory_service import run_trajectory


@pytest.fixture(scope='session')
def problem():
    """R³ × S¹ type data: a 2-sphere collapsing next to a flat circle."""
    return ProblemSpec(d=(2, 1), mu=(1, 0), eps=1.0)


@pytest.fixture(scope='session')
def problem3():
    """Three factors with two Ricci-flat circles."""
    return ProblemSpec(d=(2, 1, 1), mu=(1, 0, 0), eps=1.0)


@pytest.fixture
def testing_options():
    """Trajectory options of the testing profile (coarser L-floor)."""
    return TrajectoryOptions.from_config(TestingConfig)


@pytest.fixture(scope='session')
def regular_params():
    return SeedParams(fbar=(1.0,), C=-1.0)


@pytest.fixture(scope='session')
def regular_record(problem, regular_params):
    """Regular trajectory integrated down to the testing floor, shared by the session."""
    return run_trajectory(problem, regular_params, TrajectoryOptions.from_config(TestingConfig))


@pytest.fixture(scope='session')
def einstein_record(problem):
    """C = 0 trajectory converging to the Einstein fixed point."""
    return run_trajectory(problem, SeedParams(fbar=(1.0,), C=0.0),
                          TrajectoryOptions.from_config(TestingConfig))


@pytest.fixture
def record_subset():
    """Copy a trajectory record restricted to the samples picked by an index."""

    def _subset(record, index):
        return replace(record, s=record.s[index], states=record.states[index],
                       s1=record.s1[index], s2=record.s2[index], rcal=record.rcal[index],
                       z=record.z[index], residual=record.residual[index], flags=[])

    return _subset


@pytest.fixture
def config_file(tmp_path):
    """Write a run configuration to a temporary JSON file."""

    def _write(cfg, name='run.json'):
        path = tmp_path / name
        path.write_text(json.dumps(cfg))
        return path

    return _write
