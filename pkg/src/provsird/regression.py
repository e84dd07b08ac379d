"""Ridge-regularised lag regression for a single rate series.

Each rate is predicted from its own recent past::

    Y(t) ~ c0 + c1 Y(t-1) + ... + cJ Y(t-J)

with coefficients minimising ``sum (Y - Yhat)^2 + penalty * sum_{j=0..J} cj^2``.
The intercept is penalised together with the lag coefficients, unlike the
usual ridge convention.

Rows whose target or any lag is NaN (an undefined rate) are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.model_selection import TimeSeriesSplit
from sklearn.utils.validation import check_is_fitted

from ._validation import check_lag_range, check_series
from .exceptions import InsufficientData, InvalidInput

__all__ = [
    "DEFAULT_PENALTY_GRID",
    "HyperparameterSearchSpace",
    "LagRegressionModel",
    "lag_design",
    "ridge_solve",
    "fit",
    "aic_scores",
    "select_lag",
    "cv_scores",
    "select_penalty",
    "predict_path",
    "LagRidgeRegressor",
    "AutoLagRidgeRegressor",
]

DEFAULT_PENALTY_GRID = tuple(float(x) for x in np.geomspace(1e-4, 1e2, 7))
TARGETS = ("beta", "gamma_r", "gamma_d")


@dataclass(frozen=True)
class HyperparameterSearchSpace:
    lag_range: tuple = (1, 7)
    penalty_grid: tuple = DEFAULT_PENALTY_GRID
    cv_folds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "lag_range", check_lag_range(self.lag_range))
        grid = tuple(float(x) for x in self.penalty_grid)
        if not grid:
            raise InvalidInput("penalty grid must not be empty")
        if any(not np.isfinite(x) or x < 0 for x in grid):
            raise InvalidInput("penalties must be finite and non-negative")
        object.__setattr__(self, "penalty_grid", grid)
        if int(self.cv_folds) < 2:
            raise InvalidInput("cv_folds must be at least 2")
        object.__setattr__(self, "cv_folds", int(self.cv_folds))

    @property
    def lags(self):
        lo, hi = self.lag_range
        return range(lo, hi + 1)


@dataclass(frozen=True, eq=False)
class LagRegressionModel:
    """A fitted lag regression.

    ``coefficients[0]`` is the intercept, ``coefficients[j]`` multiplies the
    value ``j`` days back.  ``training`` keeps the series the model was fitted
    on (with NaN for undefined days) so it can be regenerated by the
    bootstrap.
    """

    coefficients: np.ndarray
    lag_count: int
    penalty: float
    residuals: np.ndarray
    target: str = "beta"
    training: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float)
        if len(coef) != self.lag_count + 1:
            raise InvalidInput("coefficients must have lag_count + 1 entries")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "residuals", np.array(self.residuals, dtype=float))
        if self.training is not None:
            object.__setattr__(self, "training", np.array(self.training, dtype=float))

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def lag_coefficients(self) -> np.ndarray:
        return self.coefficients[1:]

    def predict_one(self, recent) -> float:
        """Prediction from the last ``lag_count`` values, oldest first."""
        recent = np.asarray(recent, dtype=float)[::-1]
        return float(self.coefficients[0] + self.coefficients[1:] @ recent)


def lag_design(y, J: int):
    """Design matrix and target for rows ``t = J .. len(y)-1``.

    Returns ``(X, target, rows)`` with unusable rows (NaN target or lag)
    removed.
    """
    y = np.asarray(y, dtype=float)
    rows = np.arange(J, len(y))
    X = np.ones((len(rows), J + 1))
    for j in range(1, J + 1):
        X[:, j] = y[rows - j]
    target = y[rows]
    usable = np.isfinite(target) & np.all(np.isfinite(X), axis=1)
    return X[usable], target[usable], rows[usable]


def ridge_solve(X, y, penalty: float) -> np.ndarray:
    """Minimise ``|y - X c|^2 + penalty |c|^2``.

    Solved as an augmented least-squares problem (SVD based), which also
    gives the minimum-norm solution when ``penalty == 0`` and ``X`` is rank
    deficient.
    """
    p = X.shape[1]
    if penalty > 0:
        A = np.vstack([X, np.sqrt(penalty) * np.eye(p)])
        b = np.concatenate([y, np.zeros(p)])
    else:
        A, b = X, y
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return coef


def fit(series, J: int, penalty: float, target: str = "beta") -> LagRegressionModel:
    """Fit a lag regression with ``J`` lags and the given ridge penalty."""
    y = check_series(series)
    J = int(J)
    if J < 1:
        raise InvalidInput("lag count must be at least 1")
    if penalty < 0 or not np.isfinite(penalty):
        raise InvalidInput("penalty must be finite and non-negative")
    if len(y) < J + 2:
        raise InsufficientData(f"{target}: need at least {J + 2} values for {J} lags",
                               required=J + 2, available=len(y))
    X, t, _ = lag_design(y, J)
    if len(t) < 2:
        raise InsufficientData(f"{target}: fewer than 2 usable rows for {J} lags",
                               required=2, available=len(t))
    coef = ridge_solve(X, t, penalty)
    return LagRegressionModel(coef, J, float(penalty), t - X @ coef, target, y)


def _common_window(y, lags):
    """Largest feasible lag and the row window shared by all candidates."""
    for J in sorted(lags, reverse=True):
        X, t, rows = lag_design(y, J)
        if len(t) >= J + 2:
            return J, rows
    return None, None


def aic_scores(series, lag_range) -> dict:
    """AIC of unpenalised fits on a window usable by the largest lag.

    ``AIC = m ln(RSS/m) + 2(J+1)`` with ``m`` the common row count.  Lags
    too large for the data are left out of the result.
    """
    y = check_series(series)
    lo, hi = check_lag_range(lag_range)
    jmax, rows = _common_window(y, range(lo, hi + 1))
    if jmax is None or jmax < lo:
        raise InsufficientData(f"no lag in {lo}..{hi} can be fitted on {len(y)} values",
                               required=lo + 2, available=len(y))
    m = len(rows)
    scores = {}
    for J in range(lo, jmax + 1):
        X = np.ones((m, J + 1))
        for j in range(1, J + 1):
            X[:, j] = y[rows - j]
        coef = ridge_solve(X, y[rows], 0.0)
        rss = float(np.sum((y[rows] - X @ coef) ** 2))
        with np.errstate(divide="ignore"):
            scores[J] = m * np.log(rss / m) + 2 * (J + 1)
    return scores


def select_lag(series, lag_range) -> int:
    """Lag count with the smallest AIC; ties go to the smaller lag."""
    scores = aic_scores(series, lag_range)
    best = None
    for J in sorted(scores):
        if best is None or scores[J] < scores[best]:
            best = J
    return best


def cv_scores(series, J: int, penalty_grid, cv_folds: int) -> dict:
    """Mean forward-chaining validation MSE for each penalty.

    The usable rows are split in time order; fold ``k`` trains on the first
    ``k`` blocks and validates on block ``k+1``.
    """
    y = check_series(series)
    X, t, _ = lag_design(y, int(J))
    cv_folds = int(cv_folds)
    if cv_folds < 2:
        raise InvalidInput("cv_folds must be at least 2")
    if len(t) < cv_folds + 1:
        raise InsufficientData(
            f"{len(t)} usable rows cannot support {cv_folds} forward folds",
            required=cv_folds + 1, available=len(t))
    splits = list(TimeSeriesSplit(n_splits=cv_folds).split(X))
    scores = {}
    for lam in penalty_grid:
        lam = float(lam)
        errors = []
        for train, valid in splits:
            coef = ridge_solve(X[train], t[train], lam)
            errors.append(np.mean((t[valid] - X[valid] @ coef) ** 2))
        scores[lam] = float(np.mean(errors))
    return scores


def select_penalty(series, J: int, penalty_grid, cv_folds: int = 5) -> float:
    """Penalty with the lowest CV error; ties go to the larger penalty."""
    grid = [float(x) for x in penalty_grid]
    if not grid:
        raise InvalidInput("penalty grid must not be empty")
    if len(set(grid)) == 1:
        return grid[0]
    scores = cv_scores(series, J, grid, cv_folds)
    best = None
    for lam in sorted(scores, reverse=True):
        if best is None or scores[lam] < scores[best]:
            best = lam
    return best


def predict_path(model: LagRegressionModel, history, horizon: int) -> np.ndarray:
    """Iterate the regression ``horizon`` steps past the end of ``history``.

    Each prediction is floored at 0 before it is fed back as a lag.
    """
    J = model.lag_count
    history = np.asarray(history, dtype=float)
    if horizon < 1:
        raise InvalidInput("horizon must be at least 1")
    if len(history) < J or not np.all(np.isfinite(history[len(history) - J:])):
        raise InsufficientData(
            f"{model.target}: need {J} defined trailing values to forecast",
            required=J, available=len(history))
    buf = list(history[len(history) - J:])
    out = np.empty(horizon)
    c0, lags = model.coefficients[0], model.coefficients[1:]
    for h in range(horizon):
        value = c0 + sum(lags[j] * buf[-1 - j] for j in range(J))
        value = max(float(value), 0.0)
        out[h] = value
        buf.append(value)
    return out


class LagRidgeRegressor(BaseEstimator):
    """Estimator wrapper around :func:`fit` and :func:`predict_path`.

    Parameters
    ----------
    n_lags : int
        Number of lags ``J``.
    penalty : float
        Ridge penalty, applied to the intercept as well.
    target : str
        Name of the rate being modelled, used in error messages.

    Attributes
    ----------
    model_ : LagRegressionModel
    coef_ : ndarray of shape (n_lags,)
    intercept_ : float
    """

    def __init__(self, n_lags=1, penalty=0.0, target="beta"):
        self.n_lags = n_lags
        self.penalty = penalty
        self.target = target

    def fit(self, y, X=None):
        self.model_ = fit(y, self.n_lags, self.penalty, self.target)
        self.coef_ = self.model_.lag_coefficients
        self.intercept_ = self.model_.intercept
        return self

    def predict(self, horizon=1, history=None):
        check_is_fitted(self, "model_")
        if history is None:
            history = self.model_.training
        return predict_path(self.model_, check_series(history), horizon)


class AutoLagRidgeRegressor(LagRidgeRegressor):
    """Lag regression that picks its own lag (AIC) and penalty (CV).

    Setting ``n_lags`` skips the AIC search and only tunes the penalty; this
    is how the recovery and mortality rates reuse the lag chosen for the
    transmission rate.

    Attributes
    ----------
    n_lags_ : int
    penalty_ : float
    """

    def __init__(self, lag_range=(1, 7), penalty_grid=DEFAULT_PENALTY_GRID,
                 cv_folds=5, n_lags=None, target="beta"):
        self.lag_range = lag_range
        self.penalty_grid = penalty_grid
        self.cv_folds = cv_folds
        self.n_lags = n_lags
        self.target = target

    def fit(self, y, X=None):
        y = check_series(y)
        try:
            J = self.n_lags if self.n_lags is not None else select_lag(y, self.lag_range)
            lam = select_penalty(y, J, self.penalty_grid, self.cv_folds)
            self.model_ = fit(y, J, lam, self.target)
        except InsufficientData as exc:
            msg = str(exc)
            if not msg.startswith(f"{self.target}:"):
                msg = f"{self.target}: {msg}"
            raise InsufficientData(msg, exc.required, exc.available) from exc
        self.n_lags_ = J
        self.penalty_ = lam
        self.coef_ = self.model_.lag_coefficients
        self.intercept_ = self.model_.intercept
        return self
