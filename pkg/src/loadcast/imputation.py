"""Gap repair: temporal kNN for scattered holes, linear and seasonal imputers
for long structural gaps, and the masked-holdout trial that picks between them.

The seasonal imputer fills a missing hour from the average of all observed
values sharing its (day-of-week, hour-of-day) slot, e.g. prior Mondays at
9 AM; the trial erases a known-good stretch, re-imputes it with every
candidate method and scores pointwise error plus how well the value
distribution is preserved (earth-mover distance between histograms).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .series import HourlySeries, missing_runs

logger = logging.getLogger(__name__)

HOURS_PER_WEEK = 168


class ImputationError(ValueError):
    """Raised when a gap cannot be filled under the requested method."""


@dataclass(frozen=True)
class SeasonalProfile:
    """Mean load per (day_of_week, hour_of_day) cell, one table per channel.

    means: (7, 24, n_channels), NaN where a cell has no observations.
    counts: (7, 24, n_channels) observation support.
    """

    means: np.ndarray
    counts: np.ndarray
    channel_names: tuple[str, ...]

    def cell(self, dow: int, hour: int, channel: int = 0) -> tuple[float, int]:
        return float(self.means[dow, hour, channel]), int(self.counts[dow, hour, channel])


@dataclass(frozen=True)
class MethodResult:
    """Scores of one imputer on the masked holdout."""

    rmse: float
    mae: float
    distribution_distance: float
    histogram: np.ndarray  # counts per shared bin


@dataclass(frozen=True)
class ImputationTrial:
    masked_range: tuple[int, int]
    truth: np.ndarray
    bin_edges: np.ndarray
    truth_histogram: np.ndarray
    method_results: dict[str, MethodResult]


def _week_positions(series: HourlySeries) -> tuple[np.ndarray, np.ndarray]:
    """(day_of_week, hour_of_day) for every slot, Monday=0."""
    idx = np.arange(len(series))
    hour0 = series.start.hour
    dow0 = series.start.weekday()
    hours = hour0 + idx
    dow = (dow0 + hours // 24) % 7
    return dow, hours % 24


# ---------------------------------------------------------------------------
# kNN repair for scattered holes
# ---------------------------------------------------------------------------


def knn_impute(series: HourlySeries, k: int = 5, max_gap: int = 6) -> HourlySeries:
    """Fill missing runs of length <= max_gap per channel.

    Each missing slot becomes the mean of the k temporally nearest present
    values in the same channel (ties between equidistant neighbours prefer
    the earlier one). Runs longer than max_gap are left untouched.
    """
    if k < 1:
        raise ImputationError("k must be >= 1")
    out = series.values.copy()
    for c in range(series.n_channels):
        col = out[:, c]
        present = np.flatnonzero(~np.isnan(col))
        if np.isnan(col).sum() == 0:
            continue
        if len(present) < k:
            raise ImputationError(
                f"channel {series.channel_names[c]!r} has fewer than k={k} present values"
            )
        for start, length in missing_runs(np.isnan(col)):
            if length > max_gap:
                continue
            for i in range(start, start + length):
                col[i] = _knn_mean(col, present, i, k)
    return series.with_values(out)


def _knn_mean(col: np.ndarray, present: np.ndarray, i: int, k: int) -> float:
    pos = np.searchsorted(present, i)
    left, right = pos - 1, pos
    total = 0.0
    for _ in range(k):
        d_left = i - present[left] if left >= 0 else np.inf
        d_right = present[right] - i if right < len(present) else np.inf
        if d_left <= d_right:
            total += col[present[left]]
            left -= 1
        else:
            total += col[present[right]]
            right += 1
    return total / k


# ---------------------------------------------------------------------------
# Structural-gap imputers
# ---------------------------------------------------------------------------


def linear_impute(series: HourlySeries, index_range: tuple[int, int]) -> HourlySeries:
    """Fill missing slots in [start, stop) on the line between the bounding values.

    Requires a present value immediately before and after the range in each
    channel that has anything to fill.
    """
    start, stop = index_range
    if not 0 < start <= stop < len(series):
        raise ImputationError(
            f"range ({start}, {stop}) must be interior to the series (anchors on both sides)"
        )
    out = series.values.copy()
    for c in range(series.n_channels):
        col = out[start:stop, c]
        holes = np.isnan(col)
        if not holes.any():
            continue
        left = out[start - 1, c]
        right = out[stop, c]
        if np.isnan(left) or np.isnan(right):
            raise ImputationError(
                f"channel {series.channel_names[c]!r}: no present anchor adjacent to the gap"
            )
        # line through (start-1, left) and (stop, right)
        t = np.arange(start, stop, dtype=float)
        line = left + (right - left) * (t - (start - 1)) / (stop - (start - 1))
        col[holes] = line[holes]
    return series.with_values(out)


def build_seasonal_profile(
    series: HourlySeries, exclude: tuple[int, int] | None = None
) -> SeasonalProfile:
    """Average present values per (day_of_week, hour_of_day) cell per channel.

    Slots inside the half-open ``exclude`` range do not contribute; cells
    with no observations keep mean NaN and count 0.
    """
    dow, hod = _week_positions(series)
    use = np.ones(len(series), dtype=bool)
    if exclude is not None:
        use[exclude[0] : exclude[1]] = False

    means = np.full((7, 24, series.n_channels), np.nan)
    counts = np.zeros((7, 24, series.n_channels), dtype=np.int64)
    flat = dow * 24 + hod
    for c in range(series.n_channels):
        col = series.values[:, c]
        valid = use & ~np.isnan(col)
        cnt = np.bincount(flat[valid], minlength=HOURS_PER_WEEK)
        tot = np.bincount(flat[valid], weights=col[valid], minlength=HOURS_PER_WEEK)
        cnt2 = cnt.reshape(7, 24)
        tot2 = tot.reshape(7, 24)
        has = cnt2 > 0
        means[has, c] = tot2[has] / cnt2[has]
        counts[:, :, c] = cnt2
    if counts.sum() == 0:
        raise ImputationError("no present values outside the excluded range")
    return SeasonalProfile(means, counts, series.channel_names)


def seasonal_impute(
    series: HourlySeries, index_range: tuple[int, int], profile: SeasonalProfile
) -> HourlySeries:
    """Fill missing slots in the range from the weekly profile.

    Slots whose profile cell is empty fall back to linear interpolation
    across the gap, then to the channel's global mean, so the imputer never
    emits missing values. Raises only when a channel has no data at all.
    """
    start, stop = index_range
    if not 0 <= start <= stop <= len(series):
        raise ImputationError(f"invalid range ({start}, {stop})")
    dow, hod = _week_positions(series)
    out = series.values.copy()
    for c in range(series.n_channels):
        col = out[:, c]
        hole_idx = np.flatnonzero(np.isnan(col[start:stop])) + start
        if hole_idx.size == 0:
            continue
        fills = profile.means[dow[hole_idx], hod[hole_idx], c]
        missing_cells = np.isnan(fills)
        if missing_cells.any():
            fills[missing_cells] = _linear_fallback(col, hole_idx[missing_cells], c, series)
        col[hole_idx] = fills
    return series.with_values(out)


def _linear_fallback(
    col: np.ndarray, idx: np.ndarray, c: int, series: HourlySeries
) -> np.ndarray:
    """Fallback chain for empty profile cells: gap-spanning line, then global mean."""
    present = np.flatnonzero(~np.isnan(col))
    if present.size == 0:
        raise ImputationError(
            f"channel {series.channel_names[c]!r}: profile cell empty and no data for fallback"
        )
    out = np.empty(len(idx))
    global_mean = float(np.mean(col[present]))
    for j, i in enumerate(idx):
        pos = np.searchsorted(present, i)
        if 0 < pos < len(present):
            a, b = present[pos - 1], present[pos]
            va, vb = col[a], col[b]
            out[j] = va + (vb - va) * (i - a) / (b - a)
        else:
            out[j] = global_mean
    return out


# ---------------------------------------------------------------------------
# Masked-holdout trial
# ---------------------------------------------------------------------------

def _linear_method(series: HourlySeries, rng: tuple[int, int]) -> HourlySeries:
    return linear_impute(series, rng)


def _seasonal_method(series: HourlySeries, rng: tuple[int, int]) -> HourlySeries:
    profile = build_seasonal_profile(series, exclude=rng)
    return seasonal_impute(series, rng, profile)


# method registry used by run_imputation_trial and the pipeline
IMPUTER_METHODS = {
    "linear": _linear_method,
    "seasonal": _seasonal_method,
}


def emd_1d(counts_a: np.ndarray, counts_b: np.ndarray, bin_width: float) -> float:
    """Earth-mover distance between two equal-binning histograms.

    Counts are normalised to probability mass, so the distance is in the
    bin-value unit (watts here). Symmetric, non-negative, zero iff the
    normalised histograms coincide.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("histograms must share binning")
    if a.sum() == 0 or b.sum() == 0:
        raise ValueError("histograms must be non-empty")
    p = a / a.sum()
    q = b / b.sum()
    return float(np.abs(np.cumsum(p - q)).sum() * bin_width)


def run_imputation_trial(
    series: HourlySeries,
    mask: tuple[int, int],
    methods: tuple[str, ...] = ("linear", "seasonal"),
    channel: str | int = 0,
    n_bins: int = 50,
) -> ImputationTrial:
    """Erase a fully observed interior range and score each imputer against it.

    Every method sees the identical masked series and is scored on the
    identical truth vector: pointwise RMSE/MAE plus the earth-mover distance
    between the imputed-value histogram and the truth histogram over a
    shared binning (n_bins equal-width bins spanning the truth range).
    """
    start, stop = mask
    ch = series.channel_index(channel)
    if not 0 < start < stop < len(series):
        raise ImputationError("mask must be interior to the series")
    truth = series.values[start:stop, ch].copy()
    if np.isnan(truth).any():
        raise ImputationError("mask overlaps existing missing data")

    masked_values = series.values.copy()
    masked_values[start:stop, ch] = np.nan
    masked = series.with_values(masked_values)

    t_lo, t_hi = float(truth.min()), float(truth.max())
    if t_hi == t_lo:
        t_hi = t_lo + 1.0  # degenerate truth range: a single shared bin span
    edges = np.linspace(t_lo, t_hi, n_bins + 1)
    width = edges[1] - edges[0]
    truth_hist, _ = np.histogram(np.clip(truth, t_lo, t_hi), bins=edges)

    results: dict[str, MethodResult] = {}
    for name in methods:
        if name not in IMPUTER_METHODS:
            raise ImputationError(f"unknown imputation method {name!r}")
        filled = IMPUTER_METHODS[name](masked, (start, stop))
        est = filled.values[start:stop, ch]
        if np.isnan(est).any():
            raise ImputationError(f"method {name!r} left missing values in the mask")
        err = est - truth
        hist, _ = np.histogram(np.clip(est, t_lo, t_hi), bins=edges)
        results[name] = MethodResult(
            rmse=float(np.sqrt(np.mean(err**2))),
            mae=float(np.mean(np.abs(err))),
            distribution_distance=emd_1d(hist, truth_hist, width),
            histogram=hist,
        )
        logger.info(
            "imputation trial %-8s rmse=%.3f mae=%.3f emd=%.3f",
            name, results[name].rmse, results[name].mae, results[name].distribution_distance,
        )
    return ImputationTrial((start, stop), truth, edges, truth_hist, results)


def choose_imputer(trial: ImputationTrial) -> str:
    """Lower distribution distance wins; ties break on lower RMSE, then name."""
    return min(
        trial.method_results,
        key=lambda m: (
            trial.method_results[m].distribution_distance,
            trial.method_results[m].rmse,
            m,
        ),
    )
