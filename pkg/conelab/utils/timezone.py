"""
Timestamp utilities for conelab.

Run manifests record timezone-aware UTC timestamps in ISO 8601 form.
"""

from datetime import datetime
from zoneinfo import ZoneInfo


def utc_now() -> datetime:
    """Get the current datetime in UTC (timezone-aware).

    Returns:
        Timezone-aware datetime in UTC
    """
    return datetime.now(ZoneInfo('UTC'))


def utc_timestamp() -> str:
    """Current UTC time as an ISO 8601 string with seconds precision."""
    return utc_now().isoformat(timespec='seconds')
