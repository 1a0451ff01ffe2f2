"""Exception hierarchy for conelab.

Every error carries a message, the process exit code the CLI should use
when it escapes to the top level, and optional structured details.
Invariant violations along a trajectory never raise; they flag the record.
"""

from typing import Optional


class ConeLabError(Exception):
    """Base exception for conelab errors."""

    def __init__(self, message: str, exit_code: int = 1, details: Optional[dict] = None):
        self.message = message
        self.exit_code = exit_code
        self.details = details
        super().__init__(self.message)


class StateValidationError(ConeLabError):
    """State vector is non-finite or has the wrong shape."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, 1, details)


class DomainError(ConeLabError):
    """A warping function left the positive half-line."""

    def __init__(self, message: str):
        super().__init__(message, 1)


class ConversionError(ConeLabError):
    """t-coordinates cannot be desingularized (nonpositive denominator)."""

    def __init__(self, message: str):
        super().__init__(message, 1)


class SpecError(ConeLabError):
    """Invalid problem or cone specification."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, 1, details)


class SeedError(ConeLabError):
    """Seed parameters outside the admissible regime, or t0 too large."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, 1, details)


class PreconditionError(ConeLabError):
    """Operation called outside its hypotheses."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, 1, details)


class ConfigError(ConeLabError):
    """Run configuration failed validation."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, 1, {'field': field} if field else None)
        self.field = field


class BracketError(ConeLabError):
    """Shooting could not bracket or converge on the target."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, 3, details)
