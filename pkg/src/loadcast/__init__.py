"""Probabilistic household load forecasting toolkit.

Ingests raw smart-meter CSVs, repairs small and structural gaps, engineers
calendar/lag features, trains a hierarchy of forecasters (seasonal naive,
SARIMAX-lite, gradient-boosted trees, quantile LSTM) and scores point and
interval forecasts (RMSE, MAE, average quantile score, PICP).
"""

__version__ = "0.1.0"
