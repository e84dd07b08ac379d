"""Province-level forecasting with a time-dependent SIRD model."""

from .data_model import (Anomaly, AnomalyKind, CompartmentSeries, GeoUnit, Level,
                         ParameterSeries, SirdState, generate_synthetic, validate_series)
from .forecast import ForecastConfig, ForecastResult, SIRDForecaster, forecast_unit, train
from .regression import (AutoLagRidgeRegressor, HyperparameterSearchSpace, LagRegressionModel,
                         LagRidgeRegressor)
from .sird import extract_parameters, r0, step

__version__ = "0.1.0"

__all__ = [
    "Anomaly",
    "AnomalyKind",
    "AutoLagRidgeRegressor",
    "CompartmentSeries",
    "ForecastConfig",
    "ForecastResult",
    "GeoUnit",
    "HyperparameterSearchSpace",
    "LagRegressionModel",
    "LagRidgeRegressor",
    "Level",
    "ParameterSeries",
    "SIRDForecaster",
    "SirdState",
    "extract_parameters",
    "forecast_unit",
    "generate_synthetic",
    "r0",
    "step",
    "train",
    "validate_series",
]
