"""Time formatting helpers for training logs and run reports."""
from datetime import datetime
from typing import Optional


def format_duration(duration_seconds: Optional[float]) -> str:
    """
    Human-readable duration, largest unit first.

    @param duration_seconds: Duration in seconds
    @return: e.g. "123ms", "1.50s", "1m 5.0s", "2h 3m"
    """
    if duration_seconds is None:
        return "N/A"
    if duration_seconds == 0:
        return "0ms"
    if duration_seconds < 0.001:
        return "<1ms"
    if duration_seconds < 1:
        return f"{int(duration_seconds * 1000)}ms"
    if duration_seconds < 60:
        return f"{duration_seconds:.2f}s"

    minutes, seconds = divmod(duration_seconds, 60)
    if minutes >= 60:
        # Training phases: seconds are noise at this scale
        hours, minutes = divmod(int(minutes), 60)
        return f"{hours}h {minutes}m"
    if seconds < 0.1:
        return f"{int(minutes)}m"
    return f"{int(minutes)}m {seconds:.1f}s"


def format_timestamp(timestamp: Optional[datetime]) -> str:
    """Timestamp without microseconds, or 'N/A'."""
    if timestamp is None:
        return "N/A"
    return timestamp.strftime("%Y-%m-%d %H:%M:%S")


def calculate_duration(start: Optional[datetime], end: Optional[datetime]) -> Optional[float]:
    """Seconds between two timestamps, None when either is missing."""
    if not start or not end:
        return None
    return (end - start).total_seconds()
