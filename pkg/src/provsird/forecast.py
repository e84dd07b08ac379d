"""Per-province forecasting.

Three lag regressions (transmission, recovery, mortality rate) are trained on
a pooled peer series, applied to the province's own rate history, and the
predicted rates drive the SIRD recursion forward from the last observed day.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_horizon
from .data_model import CONSERVATION_RTOL, CompartmentSeries, GeoUnit, SirdState, as_dates
from .exceptions import InsufficientData, InvalidInput
from .regression import (DEFAULT_PENALTY_GRID, AutoLagRidgeRegressor,
                         HyperparameterSearchSpace, LagRegressionModel, predict_path)
from .sird import extract_parameters, r0, rollout
from .training import AggregationMode, AggregationSpec, build_training_set

logger = logging.getLogger(__name__)

__all__ = [
    "PARAMETERS",
    "ForecastConfig",
    "ForecastResult",
    "train",
    "forecast_unit",
    "forecast_province",
    "SIRDForecaster",
    "trajectory_violations",
    "forecast_frame",
    "write_forecast",
]

PARAMETERS = ("beta", "gamma_r", "gamma_d")
COMPARTMENTS = ("S", "I", "R", "D")
HORIZON_CAP = 15


@dataclass(frozen=True)
class ForecastConfig:
    horizon: int = 7
    search: HyperparameterSearchSpace = field(default_factory=HyperparameterSearchSpace)
    mode: AggregationMode = AggregationMode.REGIONAL
    window: Optional[int] = None
    max_horizon: int = HORIZON_CAP

    def __post_init__(self):
        object.__setattr__(self, "mode", AggregationMode(self.mode))
        check_horizon(self.horizon, self.max_horizon)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Point forecast for horizons ``1..H`` after ``as_of``.

    ``parameters`` has one row per horizon with columns beta, gamma_r,
    gamma_d; ``r0`` holds NaN where it is undefined.  ``meta`` records the
    chosen lag, per-rate penalties and the peers the models were trained on.
    """

    unit: GeoUnit
    as_of: np.datetime64
    horizons: np.ndarray
    states: tuple
    parameters: np.ndarray
    r0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.horizons)

    def compartment(self, name) -> np.ndarray:
        return np.array([getattr(s, name.lower()) for s in self.states])

    @property
    def dates(self) -> np.ndarray:
        return as_dates(self.as_of) + self.horizons


def _models_from(search: HyperparameterSearchSpace, params) -> dict:
    beta = AutoLagRidgeRegressor(search.lag_range, search.penalty_grid,
                                 search.cv_folds, target="beta").fit(params.beta)
    models = {"beta": beta.model_}
    for name in PARAMETERS[1:]:
        est = AutoLagRidgeRegressor(search.lag_range, search.penalty_grid, search.cv_folds,
                                    n_lags=beta.n_lags_, target=name).fit(params[name])
        models[name] = est.model_
    return models


def train(aggregated: CompartmentSeries, search: HyperparameterSearchSpace) -> dict:
    """Fit the three rate regressions on a pooled series.

    The lag is chosen by AIC on the transmission rate alone and shared by
    the other two rates; each rate then gets its own CV-selected penalty.
    """
    lo, _ = search.lag_range
    if len(aggregated) < lo + 2:
        raise InsufficientData(
            f"training series of {len(aggregated)} days is too short for lag {lo}",
            required=lo + 2, available=len(aggregated))
    return _models_from(search, extract_parameters(aggregated))


def forecast_unit(local: CompartmentSeries, models: Mapping[str, LagRegressionModel],
                  horizon: int, meta: Optional[dict] = None,
                  max_horizon: Optional[int] = None) -> ForecastResult:
    """Apply trained models to a province's own history and roll forward."""
    horizon = check_horizon(horizon, max_horizon)
    if len(local) < 2:
        raise InsufficientData(f"{local.unit.unit_id}: need at least two observed days",
                               required=2, available=len(local))
    history = extract_parameters(local)
    paths = {}
    for name in PARAMETERS:
        try:
            paths[name] = predict_path(models[name], history[name], horizon)
        except InsufficientData as exc:
            raise InsufficientData(f"{local.unit.unit_id}: {exc}",
                                   exc.required, exc.available) from exc
    states = rollout(local.last_state(), paths["beta"], paths["gamma_r"], paths["gamma_d"])
    params = np.column_stack([paths[name] for name in PARAMETERS])
    meta = dict(meta or {})
    meta.setdefault("lag", int(models["beta"].lag_count))
    meta.setdefault("penalty", {name: float(models[name].penalty) for name in PARAMETERS})
    return ForecastResult(local.unit, local.dates[-1], np.arange(1, horizon + 1),
                          tuple(states), params, r0(*params.T), meta)


def forecast_province(unit_id: str, units: Mapping[str, GeoUnit],
                      dataset: Mapping[str, CompartmentSeries], config: ForecastConfig,
                      as_of, horizon: Optional[int] = None,
                      cache: Optional[dict] = None):
    """Train on the province's peers as of ``as_of`` and forecast it.

    ``cache`` maps a peer set to its trained models; provinces of the same
    region share peers in regional mode, so passing one dict across calls on
    the same day avoids refitting.  Returns ``(result, models)``.
    """
    if unit_id not in units:
        raise InvalidInput(f"unknown unit {unit_id!r}")
    if unit_id not in dataset:
        raise InsufficientData(f"{unit_id}: no usable series")
    as_of = as_dates(as_of)
    province = units[unit_id]
    spec = AggregationSpec.for_province(config.mode, province, units, as_of, config.window)
    pooled, peers = build_training_set(spec, units, dataset)
    key = (config.mode.value, str(as_of), tuple(u.unit_id for u in peers), config.search)
    if cache is not None and key in cache:
        models = cache[key]
    else:
        models = train(pooled, config.search)
        if cache is not None:
            cache[key] = models
    local = dataset[unit_id].until(as_of)
    if len(local) == 0 or local.dates[-1] != as_of:
        raise InsufficientData(f"{unit_id}: no observation on {as_of}")
    meta = {"peers": [u.unit_id for u in peers], "mode": config.mode.value}
    result = forecast_unit(local, models, horizon or config.horizon, meta,
                           max_horizon=config.max_horizon)
    return result, models


class SIRDForecaster(BaseEstimator):
    """Estimator interface: ``fit`` on a pooled series, ``predict`` a province.

    Parameters
    ----------
    lag_range : tuple of int
        Inclusive range of lag counts searched by AIC.
    penalty_grid : sequence of float
        Ridge penalties searched by forward-chaining cross-validation.
    cv_folds : int
    horizon : int
        Default forecast length in days.
    max_horizon : int
        Hard cap on the horizon.

    Attributes
    ----------
    models_ : dict of LagRegressionModel
    n_lags_ : int
    penalties_ : dict of float
    """

    def __init__(self, lag_range=(1, 7), penalty_grid=DEFAULT_PENALTY_GRID, cv_folds=5,
                 horizon=7, max_horizon=HORIZON_CAP):
        self.lag_range = lag_range
        self.penalty_grid = penalty_grid
        self.cv_folds = cv_folds
        self.horizon = horizon
        self.max_horizon = max_horizon

    def fit(self, aggregated: CompartmentSeries, y=None):
        search = HyperparameterSearchSpace(self.lag_range, self.penalty_grid, self.cv_folds)
        check_horizon(self.horizon, self.max_horizon)
        self.models_ = train(aggregated, search)
        self.n_lags_ = self.models_["beta"].lag_count
        self.penalties_ = {k: m.penalty for k, m in self.models_.items()}
        return self

    def predict(self, local: CompartmentSeries, horizon=None) -> ForecastResult:
        check_is_fitted(self, "models_")
        return forecast_unit(local, self.models_, horizon or self.horizon,
                             max_horizon=self.max_horizon)


def trajectory_violations(states, initial: Optional[SirdState] = None) -> list:
    """Conservation and monotonicity violations along a state sequence.

    Checks ``S+I+R+D = n`` within ``1e-9 n`` at every state, R and D
    non-decreasing and S non-increasing.  ``initial`` (the launch state), if
    given, is included in the monotonicity check.
    """
    seq = ([initial] if initial is not None else []) + list(states)
    out = []
    for k, st in enumerate(seq):
        if abs(st.s + st.i + st.r + st.d - st.n) > CONSERVATION_RTOL * st.n:
            out.append(f"state {k}: conservation off by {st.s + st.i + st.r + st.d - st.n:g}")
        if min(st.s, st.i, st.r, st.d) < 0:
            out.append(f"state {k}: negative compartment")
    for k in range(1, len(seq)):
        prev, cur = seq[k - 1], seq[k]
        if cur.r < prev.r:
            out.append(f"state {k}: R decreased")
        if cur.d < prev.d:
            out.append(f"state {k}: D decreased")
        if cur.s > prev.s:
            out.append(f"state {k}: S increased")
    return out


def forecast_frame(result: ForecastResult, bands: Optional[Mapping] = None) -> pd.DataFrame:
    """Tabular form of a forecast, one row per horizon.

    ``bands`` maps variable names (rates, ``r0`` and compartments) to
    :class:`~provsird.uncertainty.IntervalBand`; each adds ``<var>_lower`` and
    ``<var>_upper`` columns, and a ``level`` column is appended.
    """
    frame = pd.DataFrame({
        "unit_id": result.unit.unit_id,
        "as_of": str(as_dates(result.as_of)),
        "horizon": result.horizons,
    })
    for name in COMPARTMENTS:
        frame[name] = result.compartment(name)
    for k, name in enumerate(PARAMETERS):
        frame[name] = result.parameters[:, k]
    frame["r0"] = result.r0
    if bands:
        levels = set()
        for name in (*PARAMETERS, "r0", *COMPARTMENTS):
            if name in bands:
                band = bands[name]
                frame[f"{name}_lower"] = band.lower
                frame[f"{name}_upper"] = band.upper
                levels.add(band.level)
        if len(levels) > 1:
            raise InvalidInput("bands of one forecast must share a confidence level")
        frame["level"] = levels.pop()
    return frame


def write_forecast(results, csv_path, json_path, bands: Optional[Mapping] = None):
    """Write forecasts as one CSV plus a JSON metadata sidecar.

    ``bands`` optionally maps unit ids to band dictionaries accepted by
    :func:`forecast_frame`.
    """
    bands = bands or {}
    frames = [forecast_frame(r, bands.get(r.unit.unit_id)) for r in results]
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["unit_id", "as_of", "horizon", *COMPARTMENTS, *PARAMETERS, "r0"])
    table.to_csv(csv_path, index=False, lineterminator="\n")
    meta = {r.unit.unit_id: {"as_of": str(as_dates(r.as_of)), **_jsonable(r.meta)}
            for r in results}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(meta):
    out = {}
    for key, value in meta.items():
        if isinstance(value, np.generic):
            value = value.item()
        out[key] = value
    return out
