"""Utility modules for conelab."""
