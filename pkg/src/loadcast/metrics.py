"""Forecast scoring: RMSE, MAE, pinball loss, average quantile score, PICP,
and the per-model report table.

All metrics are computed in original watt units; probabilistic scores take
a ForecastDistribution holding the 5th, 50th and 95th percentile tracks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime

import numpy as np

QUANTILE_LEVELS = (0.05, 0.50, 0.95)


class MetricError(ValueError):
    """Raised on misaligned or empty metric inputs."""


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-timestep quantile forecasts at levels 0.05 / 0.50 / 0.95."""

    timestamps: tuple[datetime, ...]
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if not (len(self.q05) == len(self.q50) == len(self.q95) == n):
            raise MetricError("quantile tracks must align with timestamps")
        if np.any(self.q05 > self.q50) or np.any(self.q50 > self.q95):
            raise MetricError("quantile tracks must satisfy q05 <= q50 <= q95")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class ReportRow:
    """One model's scores; picp/aqs are None for point-only models."""

    model: str
    rmse: float
    mae: float
    picp: float | None = None
    aqs: float | None = None


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ReportRow, ...]


def _check_aligned(y: np.ndarray, yhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise MetricError("empty input")
    return y, yhat


def rmse(y, yhat) -> float:
    """Root mean squared error."""
    y, yhat = _check_aligned(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    """Mean absolute error."""
    y, yhat = _check_aligned(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def pinball_loss(y, yhat, tau: float):
    """Quantile loss: tau*(y-yhat) when y > yhat, else (1-tau)*(yhat-y).

    Under-prediction of the tau-quantile costs tau per unit, over-prediction
    1-tau; expectation is minimised by the true tau-quantile. Accepts
    scalars or aligned arrays (elementwise result).
    """
    if not 0 < tau < 1:
        raise MetricError(f"tau must be in (0, 1), got {tau}")
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    diff = y - yhat
    out = np.where(diff > 0, tau * diff, (tau - 1.0) * diff)
    return out if out.ndim else float(out)


def pinball_grad(y, yhat, tau: float):
    """d(pinball)/d(yhat): -tau when y > yhat, else 1-tau (ties take 1-tau)."""
    if not 0 < tau < 1:
        raise MetricError(f"tau must be in (0, 1), got {tau}")
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    out = np.where(y > yhat, -tau, 1.0 - tau)
    return out if out.ndim else float(out)


def average_quantile_score(
    y, dist: ForecastDistribution, quantiles: tuple[float, ...] = QUANTILE_LEVELS
) -> float:
    """Mean pinball loss over all (forecast point, quantile level) pairs.

    ``quantiles`` may restrict scoring to a subset of the distribution's
    levels, e.g. (0.5,) scores the median track alone.
    """
    tracks = dict(zip(QUANTILE_LEVELS, (dist.q05, dist.q50, dist.q95)))
    unknown = set(quantiles) - set(tracks)
    if not quantiles or unknown:
        raise MetricError(f"distribution carries quantiles {QUANTILE_LEVELS}, got {quantiles}")
    y = np.asarray(y, dtype=float)
    if len(y) != len(dist):
        raise MetricError("actuals misaligned with forecast distribution")
    if len(y) == 0:
        raise MetricError("empty input")
    total = 0.0
    for tau in quantiles:
        total += float(np.sum(pinball_loss(y, tracks[tau], tau)))
    return total / (len(y) * len(quantiles))


def picp(y, dist: ForecastDistribution) -> float:
    """Prediction-interval coverage, percent of actuals with q05 <= y <= q95.

    Boundary hits count as covered.
    """
    y = np.asarray(y, dtype=float)
    if len(y) != len(dist):
        raise MetricError("actuals misaligned with forecast distribution")
    if len(y) == 0:
        raise MetricError("empty input")
    covered = (dist.q05 <= y) & (y <= dist.q95)
    return float(100.0 * np.count_nonzero(covered) / len(y))


def assemble_report(entries: list[ReportRow] | tuple[ReportRow, ...]) -> EvalReport:
    """Validate and order report rows (input order is the pipeline's model order)."""
    if not entries:
        raise MetricError("report needs at least one entry")
    names = [e.model for e in entries]
    if len(set(names)) != len(names):
        raise MetricError(f"duplicate model names in report: {names}")
    for e in entries:
        if e.picp is not None and not 0.0 <= e.picp <= 100.0:
            raise MetricError(f"picp out of range for {e.model}: {e.picp}")
    return EvalReport(tuple(entries))


def _fmt(value: float | None, pattern: str) -> str:
    return "N/A" if value is None else pattern % value


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Model", "RMSE", "MAE", "PICP", "AQS"])
    for row in report.rows:
        writer.writerow(
            [
                row.model,
                _fmt(row.rmse, "%.4f"),
                _fmt(row.mae, "%.4f"),
                _fmt(row.picp, "%.2f%%"),
                _fmt(row.aqs, "%.4f"),
            ]
        )
    return buf.getvalue()


def report_to_text(report: EvalReport) -> str:
    """Aligned-column table, one row per model."""
    header = ["Model", "RMSE", "MAE", "PICP (90%)", "Avg. Quantile Score"]
    body = [
        [
            row.model,
            _fmt(row.rmse, "%.4f"),
            _fmt(row.mae, "%.4f"),
            _fmt(row.picp, "%.2f%%"),
            _fmt(row.aqs, "%.4f"),
        ]
        for row in report.rows
    ]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
             for line in [header] + body]
    return "\n".join(lines) + "\n"
