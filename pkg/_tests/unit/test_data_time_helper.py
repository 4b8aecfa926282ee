from datetime import datetime, timedelta

import pytest

from helpers.data_time_helper import calculate_duration, format_duration, format_timestamp


@pytest.mark.parametrize("seconds, expected", [
    (None, "N/A"),
    (0, "0ms"),
    (0.0005, "<1ms"),
    (0.123, "123ms"),
    (1.5, "1.50s"),
    (65.0, "1m 5.0s"),
    (120.05, "2m"),
    (7380.0, "2h 3m"),
])
def test_format_duration(seconds, expected):
    assert format_duration(seconds) == expected


def test_timestamps():
    start = datetime(2024, 3, 1, 12, 0, 0, 123456)

    assert format_timestamp(start) == "2024-03-01 12:00:00"
    assert format_timestamp(None) == "N/A"
    assert calculate_duration(start, start + timedelta(seconds=90)) == 90.0
    assert calculate_duration(None, start) is None
