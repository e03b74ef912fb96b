"""Recursive rollout evaluation and report shaping.

Forecasts beyond the model's chunk length are produced recursively: each
chunk's predictions are written into a working copy of the scaled load
column, so deeper chunks' short lags read earlier forecasts instead of the
(unknown) truth.  Exogenous and calendar columns are taken as known over
the forecast window.  Reports aggregate per-anchor relative error over the
full anchor set, the holiday-touching subset, and a noise-injected rerun.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CoverageError, FrameTooShortError
from .frames import (
    Scaler,
    TimeSeriesFrame,
    apply_scaler,
    format_timestamp,
    inject_noise,
)
from .lags import LagSet, ScaledInput
from .training import mape

SUBSETS = ("full", "holidays", "noisy")
DEFAULT_STRIDE = 24


@dataclass(frozen=True)
class HorizonSpec:
    """Evaluation horizons in hours; each must be a multiple of the model's
    chunk length so rollouts tile exactly."""

    horizons: tuple[int, ...] = (24, 48, 168)

    def __post_init__(self):
        if not self.horizons:
            raise ConfigError("need at least one horizon")
        for h in self.horizons:
            if h < 1:
                raise ConfigError(f"horizon must be positive, got {h}")

    def validate_chunks(self, tau: int) -> None:
        for h in self.horizons:
            if h % tau:
                raise ConfigError(
                    f"horizon {h} is not a multiple of the chunk length {tau}"
                )


@dataclass
class MetricsReport:
    """Per (horizon, subset) error cells plus provenance."""

    method: str
    fingerprint: str
    param_counts: dict[str, int]
    # (horizon, subset) -> {"mape": float | None, "anchors": int}
    cells: dict = field(default_factory=dict)

    def cell(self, horizon: int, subset: str):
        return self.cells.get((horizon, subset))


def forecast_rollout(
    model,
    scaled: TimeSeriesFrame,
    t0: int,
    horizon: int,
    lag_set: LagSet,
    scaler: Scaler,
    directive=None,
) -> np.ndarray:
    """Forecast hours t0+1 .. t0+horizon, in original load units.

    True future loads are blanked from the working copy before the first
    chunk, so any lag read landing past t0 can only see forecasts.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    n = scaled.n_rows
    if t0 + horizon >= n:
        raise FrameTooShortError(
            f"anchor {t0} with horizon {horizon} runs past the frame ({n} rows)"
        )
    tau = model.config.horizon
    tcol = scaled.target_index
    future = slice(t0 + 1, t0 + 1 + horizon)

    exo = np.ones(scaled.n_features, dtype=bool)
    exo[tcol] = False
    gaps = np.nonzero(scaled.missing[future][:, exo].any(axis=1))[0]
    if gaps.size:
        ts = scaled.timestamps[t0 + 1 + int(gaps[0])]
        raise CoverageError(
            f"missing exogenous data at {format_timestamp(ts)} "
            f"inside the forecast window"
        )

    values = scaled.values.copy()
    missing = scaled.missing.copy()
    values[future, tcol] = np.nan
    missing[future, tcol] = True

    lags = np.array(lag_set.lags)
    out = np.empty(horizon)
    chunks = math.ceil(horizon / tau)
    for c in range(chunks):
        anchor = t0 + c * tau
        rows = anchor - lags
        if rows[0] < 0:
            raise FrameTooShortError(
                f"anchor {anchor} reaches before the frame at lag {lag_set.max_lag}"
            )
        bad = np.nonzero(missing[rows].any(axis=1))[0]
        if bad.size:
            row = int(rows[int(bad[0])])
            raise CoverageError(
                f"missing data at {format_timestamp(scaled.timestamps[row])} "
                f"(lag {int(lags[int(bad[0])])} of chunk {c})"
            )
        x = ScaledInput(anchor, lag_set.lags, values[rows])
        if directive is None:
            pred = model.forward(x).values[0]
        else:
            pred = model.forward(x, directive).values[0]
        take = min(tau, horizon - c * tau)
        seg = slice(anchor + 1, anchor + 1 + take)
        values[seg, tcol] = pred[:take]
        missing[seg, tcol] = False
        out[c * tau : c * tau + take] = pred[:take]

    stats = scaler.stats[scaled.target_name]
    return out * stats.std + stats.mean


def seasonal_naive(frame: TimeSeriesFrame, t0: int, horizon: int) -> np.ndarray:
    """Week-ago persistence: forecast(t0+h) = load(t0+h-168)."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    first = t0 + 1 - 168
    if first < 0:
        raise FrameTooShortError(
            f"anchor {t0} lacks a week of history for the persistence baseline"
        )
    rows = np.arange(first, first + horizon)
    col = frame.target_index
    gaps = np.nonzero(frame.missing[rows, col])[0]
    if gaps.size:
        ts = frame.timestamps[rows[int(gaps[0])]]
        raise CoverageError(f"missing load at {format_timestamp(ts)}")
    return frame.values[rows, col].copy()


def _rollout_feasible(
    frame: TimeSeriesFrame, t0: int, horizon: int, tau: int, lags: np.ndarray
) -> bool:
    """All historical reads clean, future exogenous known, truth observed."""
    n = frame.n_rows
    if t0 + horizon >= n or t0 - int(lags.max()) < 0:
        return False
    tcol = frame.target_index
    future = np.arange(t0 + 1, t0 + 1 + horizon)
    if frame.missing[future, tcol].any():
        return False  # no truth to score against
    exo = np.ones(frame.n_features, dtype=bool)
    exo[tcol] = False
    if frame.missing[future][:, exo].any():
        return False
    for c in range(math.ceil(horizon / tau)):
        rows = t0 + c * tau - lags
        historical = rows[rows <= t0]
        if frame.missing[historical].any():
            return False
    return True


def evaluation_anchors(
    frame: TimeSeriesFrame,
    rng: tuple[int, int],
    horizon: int,
    tau: int,
    lag_set: LagSet,
    stride: int = DEFAULT_STRIDE,
) -> np.ndarray:
    """Feasible rollout anchors inside [start, end), stepping by stride."""
    start, end = rng
    lags = np.array(lag_set.lags)
    found = [
        t0
        for t0 in range(start, end, stride)
        if t0 + horizon <= end - 1
        and _rollout_feasible(frame, t0, horizon, tau, lags)
    ]
    return np.array(found, dtype=np.int64)


def _holiday_column(frame: TimeSeriesFrame) -> np.ndarray | None:
    for name in ("holiday", "holiday_id"):
        if frame.has_feature(name):
            return frame.column(name)
    return None


def evaluate(
    model,
    frame: TimeSeriesFrame,
    scaler: Scaler,
    rng: tuple[int, int],
    horizons=(24, 48, 168),
    lag_set: LagSet | None = None,
    stride: int = DEFAULT_STRIDE,
    noise_seed: int = 0,
    subsets=SUBSETS,
    fingerprint: str = "",
) -> MetricsReport:
    """Score rollouts anchored through ``rng`` on the requested subsets.

    The noisy subset re-runs the full anchor set on a perturbed copy of the
    frame (exogenous continuous cells only), scaled by the same fitted
    scaler, scored against the clean truth.
    """
    if lag_set is None:
        from .lags import lag_set_for_history

        lag_set = lag_set_for_history(frame.n_rows)
    unknown = set(subsets) - set(SUBSETS)
    if unknown:
        raise ConfigError(f"unknown subsets: {sorted(unknown)}")
    tau = model.config.horizon
    spec = HorizonSpec(tuple(horizons))
    spec.validate_chunks(tau)

    scaled = apply_scaler(frame, scaler)
    raw_load = frame.values[:, frame.target_index]
    holiday_col = _holiday_column(frame)

    noisy_scaled = None
    if "noisy" in subsets:
        noisy_scaled = apply_scaler(inject_noise(frame, 0.5, noise_seed), scaler)

    n_params_fn = getattr(model, "n_params", None)
    total_params = int(n_params_fn()) if callable(n_params_fn) else 0
    report = MetricsReport(
        method=model.config.method,
        fingerprint=fingerprint,
        param_counts={"total": total_params},
    )

    for horizon in spec.horizons:
        anchors = evaluation_anchors(frame, rng, horizon, tau, lag_set, stride)
        per_anchor = {}
        noisy_per_anchor = {}
        for t0 in anchors:
            t0 = int(t0)
            truth = raw_load[t0 + 1 : t0 + 1 + horizon]
            pred = forecast_rollout(model, scaled, t0, horizon, lag_set, scaler)
            per_anchor[t0] = mape(truth, pred)
            if noisy_scaled is not None:
                noisy_pred = forecast_rollout(
                    model, noisy_scaled, t0, horizon, lag_set, scaler
                )
                noisy_per_anchor[t0] = mape(truth, noisy_pred)

        def put(subset: str, scores: dict) -> None:
            if scores:
                report.cells[(horizon, subset)] = {
                    "mape": float(np.mean(list(scores.values()))),
                    "anchors": len(scores),
                }
            else:
                report.cells[(horizon, subset)] = {"mape": None, "anchors": 0}

        if "full" in subsets:
            put("full", per_anchor)
        if "holidays" in subsets:
            if holiday_col is None:
                put("holidays", {})
            else:
                touching = {
                    t0: score
                    for t0, score in per_anchor.items()
                    if (holiday_col[t0 + 1 : t0 + 1 + horizon] != 0).any()
                }
                put("holidays", touching)
        if "noisy" in subsets:
            put("noisy", noisy_per_anchor)
    return report


# ---------------------------------------------------------------------------
# report files (byte-stable: no timestamps, fixed ordering, LF endings)
# ---------------------------------------------------------------------------

def _cell_rows(report: MetricsReport):
    for (horizon, subset) in sorted(report.cells):
        cell = report.cells[(horizon, subset)]
        yield horizon, subset, cell["mape"], cell["anchors"]


def write_report_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "horizon", "subset", "mape", "anchors"])
        for horizon, subset, value, anchors in _cell_rows(report):
            writer.writerow(
                [
                    report.method,
                    horizon,
                    subset,
                    "" if value is None else repr(value),
                    anchors,
                ]
            )


def write_report_json(path, report: MetricsReport) -> None:
    doc = {
        "method": report.method,
        "fingerprint": report.fingerprint,
        "param_counts": report.param_counts,
        "cells": [
            {"horizon": h, "subset": s, "mape": v, "anchors": a}
            for h, s, v, a in _cell_rows(report)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
