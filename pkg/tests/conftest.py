"""Shared builders for the test suite."""
import numpy as np
import pytest

from loadcast.frames import (
    CALENDAR,
    CATEGORICAL,
    CONTINUOUS,
    EXOGENOUS,
    HOUR,
    TARGET,
    FeatureSpec,
    TimeSeriesFrame,
)

T0 = np.datetime64("2020-01-06T00", "h")  # a Monday


def hourly_timestamps(n, start=T0):
    return start + np.arange(n) * HOUR


def target_only_frame(values, start=T0, missing=None):
    """Single continuous load column; values may be any reals."""
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    n = len(values)
    if missing is None:
        missing = np.zeros((n, 1), dtype=bool)
    specs = (FeatureSpec("load", CONTINUOUS, TARGET),)
    return TimeSeriesFrame(hourly_timestamps(n, start), specs, values, missing)


def small_schema():
    """Target + one continuous exogenous + one categorical calendar view."""
    return (
        FeatureSpec("load", CONTINUOUS, TARGET),
        FeatureSpec("temperature", CONTINUOUS, EXOGENOUS),
        FeatureSpec("hour", CATEGORICAL, CALENDAR, cardinality=24),
    )


def small_frame(n=200, seed=0, start=T0):
    rng = np.random.default_rng(seed)
    specs = small_schema()
    values = np.column_stack(
        [
            100.0 + 10.0 * rng.standard_normal(n),
            5.0 * rng.standard_normal(n),
            np.arange(n) % 24,
        ]
    ).astype(float)
    return TimeSeriesFrame(
        hourly_timestamps(n, start), specs, values, np.zeros((n, 3), dtype=bool)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
