"""Shooting laboratory for warped-product expanding Ricci solitons."""

__version__ = '0.1.0'

# Bump when summary.json or trajectory.csv change shape.
SCHEMA_VERSION = 1
