"""Pipeline orchestration behind the CLI: ingest and cache the hourly
series, run the imputer-selection trial, train the model roster on the
chronological split and emit the evaluation report plus plot-data CSVs.

Leakage rules: the imputation trial window and all structural-gap profiles
come from the train segment only, scalers fit on the train segment only,
and every model's early-stopping validation set is the chronological tail
of the train split. Poisoning test-split values must leave training
artifacts byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import boosted, classical, imputation, metrics, neural
from .config import PipelineConfig
from .features import (
    FeatureError,
    FeatureMatrix,
    WindowTensor,
    assemble_matrix,
    calendar_features,
    windowize,
)
from .series import (
    HOUR,
    ColumnSchema,
    GapReport,
    HourlySeries,
    ScalerParams,
    detect_gaps,
    ingest_csv,
    minmax_fit,
    minmax_transform,
    missing_runs,
    resample_hourly,
    series_from_csv,
    series_to_csv,
    unscale_array,
)

logger = logging.getLogger(__name__)

CACHE_FILE = "hourly_cache.csv"
GAPS_FILE = "gap_report.csv"
TRIAL_FILE = "imputation_trial.csv"
MANIFEST_FILE = "manifest.json"
REPORT_CSV = "report.csv"
REPORT_TXT = "report.txt"

# fixed normalisation ranges for calendar columns on the neural path
_CALENDAR_RANGES = {"hour": (0.0, 23.0), "dayofweek": (0.0, 6.0),
                    "month": (1.0, 12.0), "is_weekend": (0.0, 1.0)}


class PipelineError(RuntimeError):
    """Raised when a command cannot run (missing cache, hash mismatch, ...)."""


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def _manifest_path(cfg: PipelineConfig) -> Path:
    return cfg.resolved_output_dir() / MANIFEST_FILE


def load_manifest(cfg: PipelineConfig) -> dict:
    path = _manifest_path(cfg)
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_manifest(cfg: PipelineConfig, manifest: dict) -> None:
    out_dir = cfg.resolved_output_dir()
    for entry in manifest.get("models", {}).values():
        for p in entry.get("artifacts", []):
            if not (out_dir / p).exists():
                raise PipelineError(f"manifest references missing file {p}")
    manifest["manifest_hash"] = manifest_hash(manifest)
    with open(_manifest_path(cfg), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


def manifest_hash(manifest: dict) -> str:
    """Hash of the deterministic manifest content (wall-clock stamps excluded)."""
    content = {k: v for k, v in manifest.items() if k not in ("timestamps", "manifest_hash")}
    return hashlib.sha256(json.dumps(content, sort_keys=True).encode("utf-8")).hexdigest()


def _stamp(manifest: dict, command: str) -> None:
    manifest.setdefault("timestamps", {})[command] = datetime.now(timezone.utc).isoformat()


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def _schema_from_config(cfg: PipelineConfig) -> ColumnSchema:
    cols = cfg.columns
    if not cols:
        return ColumnSchema()
    return ColumnSchema(
        timestamp=cols.get("timestamp", "Unix"),
        aggregate=cols.get("aggregate", "Aggregate"),
        appliances=tuple(cols.get("appliances", [f"Appliance{i}" for i in range(1, 10)])),
    )


def cmd_ingest(cfg: PipelineConfig) -> tuple[HourlySeries, GapReport]:
    """Parse, resample and cache the input; idempotent on identical input."""
    out_dir = cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = _file_sha256(Path(cfg.input_path))
    manifest = load_manifest(cfg)

    cache_path = out_dir / CACHE_FILE
    if manifest.get("data_fingerprint") == fingerprint and cache_path.exists():
        logger.info("ingest: cache up to date (fingerprint %s), not rewriting", fingerprint[:12])
        hourly = series_from_csv(cache_path)
        return hourly, detect_gaps(hourly, cfg.structural_gap_threshold)

    raw = ingest_csv(cfg.input_path, _schema_from_config(cfg))
    hourly = resample_hourly(raw)
    gaps = detect_gaps(hourly, cfg.structural_gap_threshold)
    series_to_csv(hourly, cache_path)
    with open(out_dir / GAPS_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_index", "start_hour", "length_hours"])
        for start, length in gaps.gaps:
            writer.writerow([start, (hourly.start + start * HOUR).isoformat(), length])

    manifest["config_hash"] = cfg.config_hash()
    manifest["data_fingerprint"] = fingerprint
    manifest["n_hours"] = len(hourly)
    manifest["channels"] = list(hourly.channel_names)
    manifest["gaps"] = [[s, l] for s, l in gaps.gaps]
    _stamp(manifest, "ingest")
    save_manifest(cfg, manifest)
    logger.info("ingest: %d hours, %d channels, %d structural gap(s)",
                len(hourly), hourly.n_channels, len(gaps.gaps))
    return hourly, gaps


def _load_cache(cfg: PipelineConfig) -> HourlySeries:
    cache_path = cfg.resolved_output_dir() / CACHE_FILE
    if not cache_path.exists():
        raise PipelineError(f"hourly cache missing; run `ingest` first ({cache_path})")
    return series_from_csv(cache_path)


# ---------------------------------------------------------------------------
# impute-eval
# ---------------------------------------------------------------------------


def _trial_window(cfg: PipelineConfig, series: HourlySeries) -> tuple[int, int]:
    """First fully observed window of >= 3 months inside the train segment,
    falling back to the longest one if it still meets the configured
    minimum."""
    split_idx = int(np.floor(cfg.split_fraction * len(series)))
    present = ~np.isnan(series.channel(0)[:split_idx])
    runs = missing_runs(present)  # the run finder is generic: runs of True
    full_months = [r for r in runs if r[1] >= 2160]
    if full_months:
        return full_months[0][0], full_months[0][0] + full_months[0][1]
    if runs:
        longest = max(runs, key=lambda r: r[1])
        if longest[1] >= cfg.trial_min_window_hours:
            return longest[0], longest[0] + longest[1]
    raise PipelineError(
        f"no gapless window of at least {cfg.trial_min_window_hours} hours in the train segment"
    )


def cmd_impute_eval(cfg: PipelineConfig) -> tuple[imputation.ImputationTrial, str]:
    """Mask the middle third of a gapless train-segment window, score the
    linear vs. seasonal imputers and record the winner in the manifest.

    The trial sees the train segment only, so the selection can never
    depend on test-split values."""
    out_dir = cfg.resolved_output_dir()
    hourly = _load_cache(cfg)
    split_idx = int(np.floor(cfg.split_fraction * len(hourly)))
    train_segment = hourly.slice_hours(0, split_idx)
    w_start, w_stop = _trial_window(cfg, hourly)
    length = w_stop - w_start
    mask = (w_start + length // 3, w_start + 2 * length // 3)
    trial = imputation.run_imputation_trial(train_segment, mask, methods=("linear", "seasonal"))
    chosen = imputation.choose_imputer(trial)

    with open(out_dir / TRIAL_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rmse", "mae", "emd"])
        for name in sorted(trial.method_results):
            r = trial.method_results[name]
            writer.writerow([name, repr(r.rmse), repr(r.mae), repr(r.distribution_distance)])
    edges = trial.bin_edges
    for name, counts in [("truth", trial.truth_histogram)] + [
        (m, trial.method_results[m].histogram) for m in sorted(trial.method_results)
    ]:
        with open(out_dir / f"hist_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for i, c in enumerate(counts):
                writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])

    manifest = load_manifest(cfg)
    manifest["chosen_imputer"] = chosen
    manifest["imputation_trial"] = {
        "masked_range": list(trial.masked_range),
        "results": {
            name: {"rmse": r.rmse, "mae": r.mae, "emd": r.distribution_distance}
            for name, r in trial.method_results.items()
        },
    }
    _stamp(manifest, "impute-eval")
    save_manifest(cfg, manifest)
    logger.info("impute-eval: chose %s (mask %s)", chosen, mask)
    return trial, chosen


# ---------------------------------------------------------------------------
# data preparation shared by train and evaluate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedData:
    full: HourlySeries            # imputed, watts
    split_idx: int
    scaler: ScalerParams          # fitted on the train segment
    tabular: FeatureMatrix        # watts, calendar + lags
    windows: WindowTensor | None  # scaled channels + normalised calendar + lags
    target_name: str

    @property
    def split_time(self) -> datetime:
        return self.full.start + self.split_idx * HOUR


def _fill_remaining_gaps(
    series: HourlySeries, chosen: str, profile: imputation.SeasonalProfile
) -> HourlySeries:
    """Fill every missing run left after kNN with the chosen imputer,
    falling back to the seasonal profile when a line has no anchors."""
    any_missing = np.isnan(series.values).any(axis=1)
    for start, length in missing_runs(any_missing):
        rng = (start, start + length)
        if chosen == "linear":
            try:
                series = imputation.linear_impute(series, rng)
                continue
            except imputation.ImputationError:
                pass
        series = imputation.seasonal_impute(series, rng, profile)
    return series


def _impute_split(cfg: PipelineConfig, hourly: HourlySeries, chosen: str) -> HourlySeries:
    """Impute train and test segments without letting test values reach the
    train side: small gaps by kNN within each segment, longer runs by the
    chosen imputer with profiles built from the train segment only."""
    split_idx = int(np.floor(cfg.split_fraction * len(hourly)))
    train = hourly.slice_hours(0, split_idx)
    test = hourly.slice_hours(split_idx, len(hourly))

    train = imputation.knn_impute(train, cfg.knn_k, cfg.knn_max_gap)
    if np.isnan(train.values).any():
        profile = imputation.build_seasonal_profile(train)
        train = _fill_remaining_gaps(train, chosen, profile)
    train_profile = imputation.build_seasonal_profile(train)

    if np.isnan(test.values).any():
        test = imputation.knn_impute(test, cfg.knn_k, cfg.knn_max_gap)
    if np.isnan(test.values).any():
        test = _fill_remaining_gaps(test, chosen, train_profile)

    values = np.vstack([train.values, test.values])
    return hourly.with_values(values)


def prepare_data(
    cfg: PipelineConfig, hourly: HourlySeries, chosen: str, need_windows: bool | None = None
) -> PreparedData:
    full = _impute_split(cfg, hourly, chosen)
    split_idx = int(np.floor(cfg.split_fraction * len(full)))
    scaler = minmax_fit(full, (0, split_idx))
    target_name = full.channel_names[0]

    tabular = assemble_matrix(
        full, calendar=cfg.calendar_features, lags=cfg.lags, target_channel=0
    )

    windows = None
    if need_windows is None:
        need_windows = "lstm" in cfg.roster
    if need_windows:
        window_channels = (
            cfg.window_channels if cfg.window_channels is not None else full.channel_names
        )
        scaled = minmax_transform(full, scaler)
        window_matrix = assemble_matrix(
            scaled,
            calendar=cfg.calendar_features,
            lags=cfg.lags,
            channels=tuple(window_channels),
            target_channel=0,
        )
        feats = window_matrix.features.copy()
        for j, name in enumerate(window_matrix.feature_order):
            if name in _CALENDAR_RANGES:
                lo, hi = _CALENDAR_RANGES[name]
                feats[:, j] = (feats[:, j] - lo) / (hi - lo)
        window_matrix = FeatureMatrix(
            window_matrix.timestamps, feats, window_matrix.feature_order, window_matrix.target
        )
        try:
            windows = windowize(
                window_matrix, window=int(cfg.params_for("lstm")["window"]), horizon=1
            )
        except FeatureError as exc:
            # the sequence model alone becomes unavailable; everything else runs
            logger.warning("window tensor unavailable: %s", exc)
    return PreparedData(full, split_idx, scaler, tabular, windows, target_name)


def _chosen_imputer(cfg: PipelineConfig, manifest: dict) -> str:
    chosen = manifest.get("chosen_imputer")
    if not chosen:
        raise PipelineError("no imputer chosen; run `impute-eval` first")
    return chosen


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_seasonal_naive(cfg: PipelineConfig, data: PreparedData, out: Path) -> list[str]:
    period = int(cfg.params_for("seasonal_naive")["period"])
    if data.split_idx < period:
        raise PipelineError(f"train split shorter than the naive period {period}")
    tail = data.full.channel(0)[data.split_idx - period : data.split_idx]
    doc = {"period": period, "history_tail": tail.tolist()}
    path = out / "seasonal_naive.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    return [path.name]


def _train_sarimax(cfg: PipelineConfig, data: PreparedData, out: Path) -> list[str]:
    params = cfg.params_for("sarimax")
    p, d, q = params["order"]
    P, D, Q, s = params["seasonal_order"]
    order = classical.SarimaxOrder(p, d, q, P, D, Q, s)
    tail_hours = int(params["train_tail_days"]) * 24
    lo = max(data.split_idx - tail_hours, 0)
    endog = data.full.channel(0)[lo : data.split_idx]
    exog_names = tuple(params["exog"])
    exog = _calendar_exog(data.full, lo, data.split_idx, exog_names)
    model = classical.sarimax_fit(
        endog, exog, order, exog_names=exog_names, max_iter=int(params["max_iter"])
    )
    path = out / "sarimax.json"
    path.write_text(classical.sarimax_to_json(model), encoding="utf-8")
    return [path.name]


def _calendar_exog(series: HourlySeries, lo: int, hi: int, names: tuple[str, ...]) -> np.ndarray:
    cal = calendar_features([series.start + i * HOUR for i in range(lo, hi)])
    return np.column_stack([cal[name] for name in names])


def _tabular_split(cfg: PipelineConfig, data: PreparedData):
    """Train-matrix rows before the split time, with the tail as validation."""
    split_time = data.split_time
    n_train = sum(1 for ts in data.tabular.timestamps if ts < split_time)
    n_fit = int(np.floor(n_train * (1.0 - cfg.validation_fraction)))
    if n_fit == 0 or n_fit == n_train:
        raise PipelineError("validation_fraction leaves an empty fit or validation set")
    fit = data.tabular.rows(0, n_fit)
    val = data.tabular.rows(n_fit, n_train)
    test = data.tabular.rows(n_train, len(data.tabular))
    return fit, val, test


def _gbdt_params(cfg: PipelineConfig, name: str) -> boosted.GbdtParams:
    p = cfg.params_for(name)
    return boosted.GbdtParams(
        n_estimators=int(p["n_estimators"]),
        learning_rate=float(p["learning_rate"]),
        max_depth=int(p["max_depth"]),
        min_samples_leaf=int(p["min_samples_leaf"]),
        early_stopping_rounds=int(p["early_stopping_rounds"]),
    )


def _train_gbdt(cfg: PipelineConfig, data: PreparedData, out: Path) -> list[str]:
    fit, val, _ = _tabular_split(cfg, data)
    model = boosted.gbdt_fit(
        fit.features, fit.target, val.features, val.target,
        params=_gbdt_params(cfg, "gbdt"),
        loss=boosted.SquaredLoss(),
        feature_order=fit.feature_order,
    )
    path = out / "gbdt.json"
    path.write_text(boosted.gbdt_to_json(model), encoding="utf-8")
    return [path.name]


def _train_gbdt_quantile(cfg: PipelineConfig, data: PreparedData, out: Path) -> list[str]:
    fit, val, _ = _tabular_split(cfg, data)
    docs = {}
    for tau in cfg.quantiles:
        model = boosted.gbdt_fit(
            fit.features, fit.target, val.features, val.target,
            params=_gbdt_params(cfg, "gbdt_quantile"),
            loss=boosted.PinballLoss(tau=tau),
            feature_order=fit.feature_order,
        )
        docs[repr(tau)] = json.loads(boosted.gbdt_to_json(model))
    path = out / "gbdt_quantile.json"
    path.write_text(json.dumps(docs, sort_keys=True, indent=1), encoding="utf-8")
    return [path.name]


def _window_split(cfg: PipelineConfig, data: PreparedData):
    if data.windows is None:
        raise PipelineError("window tensor unavailable; series too short or lstm not prepared")
    split_time = data.split_time
    n_train = sum(1 for ts in data.windows.target_timestamps if ts < split_time)
    n_fit = int(np.floor(n_train * (1.0 - cfg.validation_fraction)))
    if n_fit == 0 or n_fit == n_train:
        raise PipelineError("validation_fraction leaves an empty fit or validation set")
    return (
        data.windows.samples(0, n_fit),
        data.windows.samples(n_fit, n_train),
        data.windows.samples(n_train, data.windows.n_samples),
    )


def _train_lstm(cfg: PipelineConfig, data: PreparedData, out: Path) -> list[str]:
    params = cfg.params_for("lstm")
    fit, val, _ = _window_split(cfg, data)
    model = neural.init_model(
        n_features=fit.data.shape[2],
        hidden=tuple(params["hidden"]),
        dropout_rate=float(params["dropout"]),
        quantiles=cfg.quantiles,
        seed=cfg.model_seed("lstm"),
    )
    model, history = neural.train(
        model, fit, val,
        neural.TrainConfig(
            max_epochs=int(params["max_epochs"]),
            patience=int(params["patience"]),
            batch_size=int(params["batch_size"]),
            learning_rate=float(params["learning_rate"]),
            seed=cfg.model_seed("lstm"),
        ),
    )
    neural.save_checkpoint(model, str(out / "lstm"), scaler=data.scaler)
    neural.history_to_csv(history, out / "lstm_history.csv")
    return ["lstm.json", "lstm.bin", "lstm_history.csv"]


_TRAINERS = {
    "seasonal_naive": _train_seasonal_naive,
    "sarimax": _train_sarimax,
    "gbdt": _train_gbdt,
    "gbdt_quantile": _train_gbdt_quantile,
    "lstm": _train_lstm,
}


def cmd_train(cfg: PipelineConfig, models: tuple[str, ...] | None = None) -> dict:
    """Train every enabled model; a failing model is recorded, not fatal."""
    out_dir = cfg.resolved_output_dir()
    hourly = _load_cache(cfg)
    manifest = load_manifest(cfg)
    chosen = _chosen_imputer(cfg, manifest)
    data = prepare_data(cfg, hourly, chosen)

    roster = models if models is not None else cfg.roster
    for name in roster:
        if name not in cfg.roster:
            raise PipelineError(f"model {name!r} is not in the configured roster {cfg.roster}")

    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    entries = manifest.setdefault("models", {})
    for name in roster:
        try:
            artifacts = _TRAINERS[name](cfg, data, models_dir)
            hashes = {a: _file_sha256(models_dir / a) for a in artifacts}
            entries[name] = {
                "status": "ok",
                "artifacts": [f"models/{a}" for a in artifacts],
                "artifact_sha256": hashes,
                "seed": cfg.model_seed(name),
            }
            logger.info("train: %s ok (%s)", name, ", ".join(artifacts))
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            entries[name] = {"status": "failed", "artifacts": [], "error": str(exc)}
            logger.error("train: %s failed: %s", name, exc)

    manifest["config_hash"] = cfg.config_hash()
    _stamp(manifest, "train")
    save_manifest(cfg, manifest)
    return manifest


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _predict_seasonal_naive(cfg, data, path) -> np.ndarray:
    doc = json.loads(path.read_text(encoding="utf-8"))
    period = int(doc["period"])
    actual = data.full.channel(0)
    history = np.asarray(doc["history_tail"], dtype=float)
    # rolling one-step forecast: the value one period earlier, actuals included
    combined = np.concatenate([history, actual[data.split_idx :]])
    return combined[len(history) - period : len(combined) - period]


def _predict_sarimax(cfg, data, path) -> np.ndarray:
    model = classical.sarimax_from_json(path.read_text(encoding="utf-8"))
    steps = len(data.full) - data.split_idx
    exog = _calendar_exog(data.full, data.split_idx, len(data.full), model.exog_names)
    return classical.sarimax_forecast(model, steps, exog if len(model.beta) else None)


def _test_matrix(cfg: PipelineConfig, data: PreparedData) -> FeatureMatrix:
    split_time = data.split_time
    n_train = sum(1 for ts in data.tabular.timestamps if ts < split_time)
    return data.tabular.rows(n_train, len(data.tabular))


def _predict_gbdt(cfg, data, path) -> np.ndarray:
    model = boosted.gbdt_from_json(path.read_text(encoding="utf-8"))
    return boosted.gbdt_predict(model, _test_matrix(cfg, data))


def _predict_gbdt_quantile(cfg, data, path) -> metrics.ForecastDistribution:
    docs = json.loads(path.read_text(encoding="utf-8"))
    models = {float(tau): boosted.gbdt_from_json(json.dumps(doc)) for tau, doc in docs.items()}
    return boosted.gbdt_predict_quantiles(models, _test_matrix(cfg, data))


def _predict_lstm(cfg, data, path_prefix) -> metrics.ForecastDistribution:
    model, scaler = neural.load_checkpoint(str(path_prefix))
    _, _, test = _window_split(cfg, data)
    return neural.predict_quantiles(model, test, scaler=scaler, target_channel=data.target_name)


def _write_plot_csv(path: Path, timestamps, actual, point, q05=None, q95=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "actual", "point_or_q50", "q05", "q95"])
        for i, ts in enumerate(timestamps):
            writer.writerow([
                ts.isoformat(),
                repr(float(actual[i])),
                repr(float(point[i])),
                "" if q05 is None else repr(float(q05[i])),
                "" if q95 is None else repr(float(q95[i])),
            ])


def _score_external(cfg: PipelineConfig, data: PreparedData, name: str, path: str):
    """Score an externally produced plot-format CSV against our test actuals."""
    test_ts = {data.full.start + i * HOUR: i for i in range(data.split_idx, len(data.full))}
    actual = data.full.channel(0)
    ys, points, q05s, q95s = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ts = datetime.fromisoformat(row["timestamp"])
            if ts not in test_ts:
                continue
            ys.append(actual[test_ts[ts]])
            points.append(float(row["point_or_q50"]))
            if row.get("q05") and row.get("q95"):
                q05s.append(float(row["q05"]))
                q95s.append(float(row["q95"]))
    if not ys:
        raise PipelineError(f"external predictions {path} share no test timestamps")
    y = np.asarray(ys)
    point = np.asarray(points)
    row = metrics.ReportRow(name, metrics.rmse(y, point), metrics.mae(y, point))
    if len(q05s) == len(ys):
        dist = metrics.ForecastDistribution(
            tuple(range(len(ys))),
            np.minimum(np.asarray(q05s), point),
            point,
            np.maximum(np.asarray(q95s), point),
        )
        row = metrics.ReportRow(
            name, row.rmse, row.mae,
            picp=metrics.picp(y, dist), aqs=metrics.average_quantile_score(y, dist),
        )
    return row


def cmd_evaluate(cfg: PipelineConfig) -> metrics.EvalReport:
    """Score every trained model on the test split in watts, write the
    report and per-model plot CSVs. Runs on whatever artifacts exist."""
    out_dir = cfg.resolved_output_dir()
    manifest = load_manifest(cfg)
    if not manifest.get("models"):
        raise PipelineError("no trained models in manifest; run `train` first")
    if manifest.get("config_hash") != cfg.config_hash():
        raise PipelineError("artifact/config hash mismatch: config changed since training")
    hourly = _load_cache(cfg)
    data = prepare_data(cfg, hourly, _chosen_imputer(cfg, manifest))

    test_actual = data.full.channel(0)[data.split_idx :]
    test_timestamps = [
        data.full.start + i * HOUR for i in range(data.split_idx, len(data.full))
    ]
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)

    rows: list[metrics.ReportRow] = []
    for name in cfg.roster:
        entry = manifest["models"].get(name)
        if not entry or entry.get("status") != "ok":
            logger.warning("evaluate: skipping %s (not trained)", name)
            continue
        artifact = out_dir / entry["artifacts"][0]
        if name == "seasonal_naive":
            pred = _predict_seasonal_naive(cfg, data, artifact)
            rows.append(_point_row(name, test_actual, pred))
            _write_plot_csv(plots_dir / f"{name}.csv", test_timestamps, test_actual, pred)
        elif name == "sarimax":
            pred = _predict_sarimax(cfg, data, artifact)
            rows.append(_point_row(name, test_actual, pred))
            _write_plot_csv(plots_dir / f"{name}.csv", test_timestamps, test_actual, pred)
        elif name == "gbdt":
            test_m = _test_matrix(cfg, data)
            pred = _predict_gbdt(cfg, data, artifact)
            rows.append(_point_row(name, test_m.target, pred))
            _write_plot_csv(plots_dir / f"{name}.csv", test_m.timestamps, test_m.target, pred)
        elif name == "gbdt_quantile":
            test_m = _test_matrix(cfg, data)
            dist = _predict_gbdt_quantile(cfg, data, artifact)
            rows.append(_dist_row(name, test_m.target, dist))
            _write_plot_csv(
                plots_dir / f"{name}.csv", test_m.timestamps, test_m.target,
                dist.q50, dist.q05, dist.q95,
            )
        elif name == "lstm":
            _, _, test_w = _window_split(cfg, data)
            dist = _predict_lstm(cfg, data, artifact.with_suffix(""))
            y = test_w.targets[:, 0]
            # window targets are scaled; bring them back to watts
            ch = data.scaler.channel_names.index(data.target_name)
            y = unscale_array(y, data.scaler.mins[ch], data.scaler.maxs[ch])
            rows.append(_dist_row(name, y, dist))
            _write_plot_csv(
                plots_dir / f"{name}.csv", dist.timestamps, y, dist.q50, dist.q05, dist.q95
            )

    for name in sorted(cfg.external_predictions):
        rows.append(_score_external(cfg, data, name, cfg.external_predictions[name]))

    report = metrics.assemble_report(rows)
    (out_dir / REPORT_CSV).write_text(metrics.report_to_csv(report), encoding="utf-8")
    (out_dir / REPORT_TXT).write_text(metrics.report_to_text(report), encoding="utf-8")

    manifest["metrics"] = {
        r.model: {"rmse": r.rmse, "mae": r.mae, "picp": r.picp, "aqs": r.aqs} for r in rows
    }
    _stamp(manifest, "evaluate")
    save_manifest(cfg, manifest)
    logger.info("evaluate: %d model row(s) written", len(rows))
    return report


def _point_row(name: str, y, pred) -> metrics.ReportRow:
    return metrics.ReportRow(name, metrics.rmse(y, pred), metrics.mae(y, pred))


def _dist_row(name: str, y, dist: metrics.ForecastDistribution) -> metrics.ReportRow:
    return metrics.ReportRow(
        name,
        metrics.rmse(y, dist.q50),
        metrics.mae(y, dist.q50),
        picp=metrics.picp(y, dist),
        aqs=metrics.average_quantile_score(y, dist),
    )


def cmd_report(cfg: PipelineConfig) -> str:
    """Re-render the report from manifest metrics without re-scoring."""
    manifest = load_manifest(cfg)
    stored = manifest.get("metrics")
    if not stored:
        raise PipelineError("no metrics in manifest; run `evaluate` first")
    rows = [
        metrics.ReportRow(name, m["rmse"], m["mae"], m.get("picp"), m.get("aqs"))
        for name, m in stored.items()
    ]
    order = {name: i for i, name in enumerate(cfg.roster)}
    rows.sort(key=lambda r: (order.get(r.model, len(order)), r.model))
    report = metrics.assemble_report(rows)
    text = metrics.report_to_text(report)
    out_dir = cfg.resolved_output_dir()
    (out_dir / REPORT_CSV).write_text(metrics.report_to_csv(report), encoding="utf-8")
    (out_dir / REPORT_TXT).write_text(text, encoding="utf-8")
    return text
