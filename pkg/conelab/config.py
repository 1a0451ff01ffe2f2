"""Configuration profiles for conelab runs."""

import os
from pathlib import Path


class Config:
    """Base configuration."""

    # Output settings
    OUTPUT_ROOT = Path(os.environ.get('CONELAB_OUTPUT_DIR', 'runs'))
    LOG_LEVEL = os.environ.get('CONELAB_LOG_LEVEL', 'INFO').upper()

    # Integrator settings
    MODE = 'adaptive'
    REL_TOL = 1e-10
    ABS_TOL = 1e-14
    MAX_STEP = 2.0
    MIN_STEP = 1e-12
    MAX_STEPS = 2_000_000
    FIXED_STEP = 0.02

    # Trajectory settings
    # Below 1e-2 the tail becomes too long for an explicit scheme; limits are extrapolated.
    L_FLOOR = float(os.environ.get('CONELAB_FLOOR', '1e-2'))
    CONSERVATION_TOL = 1e-6
    EINSTEIN_TOL = 1e-8
    MONOTONE_SLACK = 1e-10
    SEED_ORDER = 3

    # Shooting settings
    SHOOT_TOL = 1e-4
    BRACKET_FACTOR = 4.0
    MAX_EVALUATIONS = 60
    WORKERS = int(os.environ.get('CONELAB_WORKERS', '1'))

    # Subsystem settings
    SUBSYSTEM_OFFSET = 1e-8
    SUBSYSTEM_X_STOP = 1e-4

    TESTING = False


class PreciseConfig(Config):
    """Tighter floor for extraction-stability studies."""
    L_FLOOR = 5e-3


class ReferenceConfig(Config):
    """Fixed-step classic RK4 used as the independent oracle."""
    MODE = 'fixed'
    FIXED_STEP = 0.02
    L_FLOOR = 5e-2


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    L_FLOOR = 2e-2
    WORKERS = 1


# Config dictionary for easy access
config = {
    'precise': PreciseConfig,
    'reference': ReferenceConfig,
    'testing': TestingConfig,
    'default': Config,
}
