from datetime import datetime, timezone

import numpy as np
import pytest

from loadcast.series import HourlySeries

MONDAY = datetime(2013, 10, 7, tzinfo=timezone.utc)  # a Monday 00:00 UTC


def make_series(values, start=MONDAY, channel_names=None) -> HourlySeries:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if channel_names is None:
        channel_names = tuple(f"ch{i}" for i in range(arr.shape[1]))
        if arr.shape[1] == 1:
            channel_names = ("Aggregate",)
    return HourlySeries(start, arr, tuple(channel_names))


@pytest.fixture
def monday_start():
    return MONDAY
