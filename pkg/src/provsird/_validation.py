"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import InvalidInput


def check_series(y, allow_nan=True) -> np.ndarray:
    """Return ``y`` as a 1-d float array.

    NaN marks an undefined observation and is allowed unless
    ``allow_nan`` is false; infinities never are.
    """
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise InvalidInput(f"expected a 1-d series, got shape {arr.shape}")
    if np.any(np.isinf(arr)):
        raise InvalidInput("series contains infinite values")
    if not allow_nan and np.any(np.isnan(arr)):
        raise InvalidInput("series contains undefined values")
    return arr


def check_lag_range(lag_range) -> tuple:
    """Normalise an inclusive lag interval given as a pair, range or int."""
    if isinstance(lag_range, range):
        if len(lag_range) == 0:
            raise InvalidInput("empty lag range")
        lo, hi = min(lag_range), max(lag_range)
    elif np.isscalar(lag_range):
        lo = hi = int(lag_range)
    else:
        lo, hi = (int(x) for x in lag_range)
    if lo < 1 or hi < lo:
        raise InvalidInput(f"invalid lag range {lo}..{hi}")
    return lo, hi


def check_horizon(horizon, cap=None) -> int:
    if int(horizon) != horizon or horizon < 1:
        raise InvalidInput(f"horizon must be a positive integer, got {horizon!r}")
    if cap is not None and horizon > cap:
        raise InvalidInput(f"horizon {horizon} exceeds the cap of {cap} days")
    return int(horizon)
