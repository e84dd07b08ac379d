"""Forward residual bootstrap bands for rates, R0 and compartments.

A replication regenerates the training series forward from its first ``J``
values using the fitted recursion plus resampled (centred) residuals, refits
at the same lag and penalty, and forecasts from the real history with fresh
resampled residuals added at every step.  Empirical quantiles across
replications give the band, floored at 0 since rates cannot be negative.

Each replication draws from its own child of one ``SeedSequence``, so bands
depend only on the seed and the replication count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ._validation import check_horizon
from .data_model import CompartmentSeries
from .exceptions import AlignmentError, InsufficientData, InvalidInput
from .forecast import PARAMETERS
from .regression import LagRegressionModel, lag_design, ridge_solve
from .sird import extract_parameters, r0, rollout

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_REPLICATIONS",
    "IntervalBand",
    "bootstrap_paths",
    "bootstrap_parameter_band",
    "r0_band",
    "bound_trajectories",
    "variable_bands",
    "forecast_bands",
]

DEFAULT_ALPHA = 0.10
DEFAULT_REPLICATIONS = 1000
MIN_REPLICATIONS = 100


@dataclass(frozen=True, eq=False)
class IntervalBand:
    """Per-horizon ``[lower, upper]`` at confidence ``level`` (``1 - alpha``).

    NaN marks an undefined bound (an R0 bound with a zero denominator).
    """

    horizons: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    name: str = ""

    def __post_init__(self):
        for attr in ("horizons", "lower", "upper"):
            arr = np.array(getattr(self, attr), dtype=int if attr == "horizons" else float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if not (len(self.horizons) == len(self.lower) == len(self.upper)):
            raise AlignmentError("band arrays differ in length")
        both = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[both] > self.upper[both]):
            raise InvalidInput(f"band {self.name!r} has lower > upper")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (self.lower <= values) & (values <= self.upper)


def _spawn(seed, count):
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
    else:
        seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(count)]


def _start_index(y, J):
    """First index from which ``J`` consecutive values are defined."""
    ok = np.isfinite(y)
    for k in range(len(y) - J + 1):
        if ok[k:k + J].all():
            return k
    return None


def bootstrap_paths(model: LagRegressionModel, history, horizon: int,
                    replications: int = DEFAULT_REPLICATIONS, seed=None) -> np.ndarray:
    """Bootstrap forecast paths, shape ``(replications, horizon)``.

    Paths are floored at 0 at each step before being fed back, as in
    :func:`~provsird.regression.predict_path`.
    """
    horizon = check_horizon(horizon)
    J = model.lag_count
    resid = np.asarray(model.residuals, dtype=float)
    if len(resid) < J + 2:
        raise InsufficientData(f"{model.target}: bootstrap needs at least {J + 2} residuals",
                               required=J + 2, available=len(resid))
    if replications < MIN_REPLICATIONS:
        raise InvalidInput(f"need at least {MIN_REPLICATIONS} replications")
    if model.training is None:
        raise InvalidInput("model carries no training series to regenerate")
    history = np.asarray(history, dtype=float)
    if len(history) < J or not np.all(np.isfinite(history[len(history) - J:])):
        raise InsufficientData(f"{model.target}: need {J} defined trailing values",
                               required=J, available=len(history))

    y = model.training
    start = _start_index(y, J)
    if start is None:
        raise InsufficientData(f"{model.target}: no {J} consecutive defined training values")
    length = len(y) - start
    centred = resid - resid.mean()
    n_regen = length - J
    rngs = _spawn(seed, replications)
    draws = np.stack([rng.choice(centred, size=n_regen + horizon) for rng in rngs])

    c = model.coefficients
    regen = np.empty((replications, length))
    regen[:, :J] = y[start:start + J]
    for t in range(J, length):
        regen[:, t] = c[0] + regen[:, t - J:t][:, ::-1] @ c[1:] + draws[:, t - J]

    coefs = np.empty((replications, J + 1))
    for b in range(replications):
        X, target, _ = lag_design(regen[b], J)
        coefs[b] = ridge_solve(X, target, model.penalty)

    buf = np.tile(history[len(history) - J:], (replications, 1))
    paths = np.empty((replications, horizon))
    for h in range(horizon):
        recent = buf[:, buf.shape[1] - J:][:, ::-1]
        value = coefs[:, 0] + np.einsum("bj,bj->b", coefs[:, 1:], recent) + draws[:, n_regen + h]
        value = np.maximum(value, 0.0)
        paths[:, h] = value
        buf = np.column_stack([buf, value])
    return paths


def bootstrap_parameter_band(model: LagRegressionModel, history, horizon: int,
                             replications: int = DEFAULT_REPLICATIONS,
                             alpha: float = DEFAULT_ALPHA, seed=None) -> IntervalBand:
    """Forward bootstrap prediction band for one rate."""
    if not 0 < alpha < 1:
        raise InvalidInput("alpha must lie in (0, 1)")
    paths = bootstrap_paths(model, history, horizon, replications, seed)
    lower, upper = np.quantile(paths, [alpha / 2, 1 - alpha / 2], axis=0)
    return IntervalBand(np.arange(1, horizon + 1), np.maximum(lower, 0.0),
                        np.maximum(upper, 0.0), 1 - alpha, model.target)


def r0_band(beta_band: IntervalBand, gr_band: IntervalBand,
            gd_band: IntervalBand) -> IntervalBand:
    """R0 band from rate bands.

    The lower R0 bound pairs the lower transmission rate with the upper
    removal rates and vice versa.  A bound whose denominator is 0 is NaN.
    """
    for band in (gr_band, gd_band):
        if not np.array_equal(band.horizons, beta_band.horizons):
            raise AlignmentError("rate bands cover different horizons")
    lower = r0(beta_band.lower, gr_band.upper, gd_band.upper)
    upper = r0(beta_band.upper, gr_band.lower, gd_band.lower)
    return IntervalBand(beta_band.horizons, lower, upper, beta_band.level, "r0")


def bound_trajectories(local: CompartmentSeries, bands: Mapping[str, IntervalBand],
                       focus: str, point: Mapping[str, np.ndarray],
                       horizon: Optional[int] = None) -> dict:
    """Roll the SIRD recursion with the focus rate at its band edges.

    The two other rates stay at their point paths.  Returns state lists
    keyed ``"lower"``, ``"point"`` and ``"upper"`` (by focus-rate edge).
    """
    if focus not in PARAMETERS:
        raise InvalidInput(f"unknown focus rate {focus!r}")
    band = bands[focus]
    horizon = check_horizon(horizon or len(band.horizons))
    if len(band.horizons) < horizon or any(len(point[p]) < horizon for p in PARAMETERS):
        raise AlignmentError("band or point paths shorter than the horizon")
    start = local.last_state()
    out = {}
    for key, focus_path in (("lower", band.lower), ("point", point[focus]),
                            ("upper", band.upper)):
        paths = {p: np.asarray(point[p][:horizon], dtype=float) for p in PARAMETERS}
        paths[focus] = np.asarray(focus_path[:horizon], dtype=float)
        out[key] = rollout(start, paths["beta"], paths["gamma_r"], paths["gamma_d"])
    return out


def variable_bands(local: CompartmentSeries, bands: Mapping[str, IntervalBand],
                   focus: str, point: Mapping[str, np.ndarray],
                   horizon: Optional[int] = None) -> dict:
    """Compartment bands induced by one rate's band.

    Each variable's band is the per-horizon envelope of the trajectories
    from :func:`bound_trajectories`.  The point trajectory is part of the
    envelope, which keeps the point forecast inside the band even where a
    compartment responds non-monotonically to the focus rate.
    """
    traj = bound_trajectories(local, bands, focus, point, horizon)
    level = bands[focus].level
    horizons = np.arange(1, len(traj["point"]) + 1)
    out = {}
    for name in ("S", "I", "R", "D", "T"):
        attr = "total_cases" if name == "T" else name.lower()
        stack = np.array([[getattr(s, attr) for s in traj[k]] for k in traj])
        out[name] = IntervalBand(horizons, stack.min(axis=0), stack.max(axis=0), level, name)
    return out


def forecast_bands(result, models: Mapping[str, LagRegressionModel], local: CompartmentSeries,
                   replications: int = DEFAULT_REPLICATIONS, alpha: float = DEFAULT_ALPHA,
                   seed=None, focus: str = "beta") -> dict:
    """All bands for one forecast: the three rates, R0 and the compartments.

    Compartment bands come from the ``focus`` rate's band with the other two
    rates at their point forecasts.
    """
    history = extract_parameters(local)
    horizon = len(result.horizons)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seeds = seed.spawn(len(PARAMETERS))
    bands = {name: bootstrap_parameter_band(models[name], history[name], horizon,
                                            replications, alpha, seeds[k])
             for k, name in enumerate(PARAMETERS)}
    bands["r0"] = r0_band(bands["beta"], bands["gamma_r"], bands["gamma_d"])
    point = {name: result.parameters[:, k] for k, name in enumerate(PARAMETERS)}
    variables = variable_bands(local, bands, focus, point, horizon)
    bands.update({k: v for k, v in variables.items() if k != "T"})
    return bands
