"""Pipeline configuration: JSON schema, validation, hashing and seed fan-out.

One global seed derives a stable per-model seed (seed + CRC32 of the model
name), so adding or removing a model never perturbs the others.
"""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

OUTPUT_DIR_ENV = "LOADCAST_OUTPUT_DIR"

KNOWN_MODELS = ("seasonal_naive", "sarimax", "gbdt", "gbdt_quantile", "lstm")

DEFAULT_MODEL_PARAMS: dict[str, dict[str, Any]] = {
    "seasonal_naive": {"period": 24},
    "sarimax": {
        "order": [1, 1, 1],
        "seasonal_order": [1, 1, 0, 24],
        "exog": ["hour", "dayofweek"],
        "train_tail_days": 30,
        "max_iter": 500,
    },
    "gbdt": {
        "n_estimators": 1000,
        "learning_rate": 0.05,
        "max_depth": 6,
        "min_samples_leaf": 1,
        "early_stopping_rounds": 10,
    },
    "gbdt_quantile": {
        "n_estimators": 1000,
        "learning_rate": 0.05,
        "max_depth": 6,
        "min_samples_leaf": 1,
        "early_stopping_rounds": 10,
    },
    "lstm": {
        "hidden": [100, 50],
        "dropout": 0.2,
        "window": 48,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "max_epochs": 50,
        "patience": 5,
    },
}


class ConfigError(ValueError):
    """Raised when a pipeline config fails validation."""


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline settings; see README for the JSON schema.

    The default window-feature enumeration (aggregate + appliance channels
    + 4 calendar columns + 3 lags) is a documented reconstruction; the
    source material never lists the exact inputs.
    """

    input_path: str
    output_dir: str
    columns: dict[str, Any] = field(default_factory=dict)
    structural_gap_threshold: int = 24
    knn_k: int = 5
    knn_max_gap: int = 6
    trial_min_window_hours: int = 2160  # ~3 months
    calendar_features: tuple[str, ...] = ("hour", "dayofweek", "month", "is_weekend")
    lags: tuple[int, ...] = (1, 24, 168)
    window_channels: tuple[str, ...] | None = None  # None = all channels
    split_fraction: float = 0.8
    validation_fraction: float = 0.1  # tail of the train split, for early stopping
    quantiles: tuple[float, ...] = (0.05, 0.50, 0.95)
    roster: tuple[str, ...] = ("seasonal_naive", "sarimax", "gbdt", "lstm")
    model_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    external_predictions: dict[str, str] = field(default_factory=dict)
    seed: int = 1234

    def __post_init__(self) -> None:
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must be in (0, 1)")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if list(self.quantiles) != sorted(set(self.quantiles)):
            raise ConfigError("quantiles must be strictly increasing")
        if tuple(self.quantiles) != (0.05, 0.50, 0.95):
            # the report and distribution formats fix the q05/q50/q95 tracks
            raise ConfigError("quantiles must be the three levels 0.05, 0.50, 0.95")
        for name in self.roster:
            if name not in KNOWN_MODELS:
                raise ConfigError(f"unknown model {name!r}; known: {KNOWN_MODELS}")
        for name in self.model_params:
            if name not in KNOWN_MODELS:
                raise ConfigError(f"model_params for unknown model {name!r}")
            unknown = set(self.model_params[name]) - set(DEFAULT_MODEL_PARAMS[name])
            if unknown:
                raise ConfigError(f"unknown hyperparameters for {name}: {sorted(unknown)}")

    def params_for(self, model: str) -> dict[str, Any]:
        merged = dict(DEFAULT_MODEL_PARAMS[model])
        merged.update(self.model_params.get(model, {}))
        return merged

    def model_seed(self, model: str) -> int:
        return self.seed + zlib.crc32(model.encode("utf-8")) % 100_000

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def to_canonical_json(self) -> str:
        doc = {
            "input_path": self.input_path,
            "output_dir": self.output_dir,
            "columns": self.columns,
            "structural_gap_threshold": self.structural_gap_threshold,
            "knn_k": self.knn_k,
            "knn_max_gap": self.knn_max_gap,
            "trial_min_window_hours": self.trial_min_window_hours,
            "calendar_features": list(self.calendar_features),
            "lags": list(self.lags),
            "window_channels": list(self.window_channels) if self.window_channels else None,
            "split_fraction": self.split_fraction,
            "validation_fraction": self.validation_fraction,
            "quantiles": list(self.quantiles),
            "roster": list(self.roster),
            "model_params": self.model_params,
            "external_predictions": self.external_predictions,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_canonical_json().encode("utf-8")).hexdigest()


def load_config(path) -> PipelineConfig:
    """Parse and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(doc, base_dir=Path(path).parent)


def config_from_dict(doc: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    missing = {"input_path", "output_dir"} - set(doc)
    if missing:
        raise ConfigError(f"config missing required keys: {sorted(missing)}")
    known = {
        "input_path", "output_dir", "columns", "structural_gap_threshold",
        "knn_k", "knn_max_gap", "trial_min_window_hours", "calendar_features",
        "lags", "window_channels", "split_fraction", "validation_fraction",
        "quantiles", "roster", "model_params", "external_predictions", "seed",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def resolve(p: str) -> str:
        path = Path(p)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return str(path)

    kwargs: dict[str, Any] = {
        "input_path": resolve(doc["input_path"]),
        "output_dir": resolve(doc["output_dir"]),
    }
    for key in ("columns", "model_params", "external_predictions", "seed",
                "structural_gap_threshold", "knn_k", "knn_max_gap",
                "trial_min_window_hours", "split_fraction", "validation_fraction"):
        if key in doc:
            kwargs[key] = doc[key]
    for key in ("calendar_features", "lags", "quantiles", "roster"):
        if key in doc:
            kwargs[key] = tuple(doc[key])
    if doc.get("window_channels") is not None:
        kwargs["window_channels"] = tuple(doc["window_channels"])
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
