"""Domain types for compartment and parameter series.

Compartment counts are stored as floats: the recovered series of a province is
a ratio-based estimate, and forecasts are continuous.  Dates are numpy
``datetime64[D]`` arrays with a one-day step.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import InvalidInput, StructuralError

__all__ = [
    "Level",
    "GeoUnit",
    "SirdState",
    "CompartmentSeries",
    "ParameterSeries",
    "Anomaly",
    "AnomalyKind",
    "as_dates",
    "validate_series",
    "generate_synthetic",
]

CONSERVATION_RTOL = 1e-9
ONE_DAY = np.timedelta64(1, "D")


class Level(str, enum.Enum):
    PROVINCE = "province"
    REGION = "region"
    NATION = "nation"


class AnomalyKind(str, enum.Enum):
    NEGATIVE_INCREMENT = "negative-increment"
    NEGATIVE_VALUE = "negative-value"
    CONSERVATION_VIOLATION = "conservation-violation"
    TOTAL_MISMATCH = "total-mismatch"
    DATE_GAP = "date-gap"
    REPAIR = "repair"
    SOURCE_DISCREPANCY = "source-discrepancy"
    UNUSABLE = "unusable"


@dataclass(frozen=True)
class Anomaly:
    unit_id: str
    date: Optional[np.datetime64]
    kind: AnomalyKind
    detail: str = ""

    def as_row(self):
        date = "" if self.date is None else str(np.datetime64(self.date, "D"))
        return {"unit_id": self.unit_id, "date": date,
                "kind": AnomalyKind(self.kind).value, "detail": self.detail}


@dataclass(frozen=True)
class GeoUnit:
    """A geographic unit: province, region or nation.

    ``population`` is the fixed model population ``n``.
    """

    unit_id: str
    name: str = ""
    level: Level = Level.PROVINCE
    parent_id: Optional[str] = None
    population: int = 1

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if int(self.population) != self.population or self.population < 1:
            raise InvalidInput(
                f"unit {self.unit_id!r}: population must be a positive integer")
        object.__setattr__(self, "population", int(self.population))
        if self.level is Level.PROVINCE and not self.parent_id:
            raise InvalidInput(
                f"province {self.unit_id!r} must have a parent region")
        if not self.name:
            object.__setattr__(self, "name", self.unit_id)


def as_dates(dates) -> np.ndarray:
    """Coerce dates (strings, ``datetime.date`` or datetime64) to ``datetime64[D]``."""
    if isinstance(dates, (str, dt.date, np.datetime64)):
        return np.datetime64(dates, "D")
    return np.asarray(dates, dtype="datetime64[D]")


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SirdState:
    s: float
    i: float
    r: float
    d: float
    n: int

    def __post_init__(self):
        vals = (self.s, self.i, self.r, self.d)
        if min(vals) < 0:
            raise InvalidInput(f"negative compartment in {self}")
        if abs(sum(vals) - self.n) > CONSERVATION_RTOL * self.n:
            raise InvalidInput(f"state does not conserve n={self.n}: {self}")

    @property
    def total_cases(self):
        return self.i + self.r + self.d

    def as_array(self):
        return np.array([self.s, self.i, self.r, self.d])


@dataclass(frozen=True, eq=False)
class CompartmentSeries:
    """Dated S, I, R, D and total-case counts for one unit.

    Construction only coerces types; :func:`validate_series` reports
    violations of the conservation, monotonicity and calendar rules.
    """

    unit: GeoUnit
    dates: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    D: np.ndarray
    total_cases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        for name in ("S", "I", "R", "D", "total_cases"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def from_compartments(cls, unit, dates, S, I, R, D):
        I, R, D = (np.asarray(x, dtype=float) for x in (I, R, D))
        return cls(unit, dates, S, I, R, D, I + R + D)

    @property
    def n(self) -> int:
        return self.unit.population

    @property
    def T(self) -> np.ndarray:
        return self.total_cases

    def __len__(self):
        return len(self.dates)

    def state(self, index: int) -> SirdState:
        return SirdState(float(self.S[index]), float(self.I[index]),
                         float(self.R[index]), float(self.D[index]), self.n)

    def last_state(self) -> SirdState:
        return self.state(-1)

    def compartments(self) -> np.ndarray:
        """Array of shape (len, 4) with columns S, I, R, D."""
        return np.column_stack([self.S, self.I, self.R, self.D])

    def _subset(self, mask):
        return CompartmentSeries(self.unit, self.dates[mask], self.S[mask],
                                 self.I[mask], self.R[mask], self.D[mask],
                                 self.total_cases[mask])

    def until(self, as_of) -> "CompartmentSeries":
        """Observations dated on or before ``as_of``."""
        return self._subset(self.dates <= as_dates(as_of))

    def between(self, start, end) -> "CompartmentSeries":
        start, end = as_dates(start), as_dates(end)
        return self._subset((self.dates >= start) & (self.dates <= end))

    def on(self, dates) -> "CompartmentSeries":
        """Restrict to ``dates``; every one of them must be present."""
        dates = as_dates(dates)
        idx = np.searchsorted(self.dates, dates)
        if np.any(idx >= len(self.dates)) or np.any(self.dates[np.minimum(idx, len(self.dates) - 1)] != dates):
            raise StructuralError(f"{self.unit.unit_id}: requested dates not all present")
        return self._subset(idx)

    def with_unit(self, unit: GeoUnit) -> "CompartmentSeries":
        return CompartmentSeries(unit, self.dates, self.S, self.I, self.R,
                                 self.D, self.total_cases)


@dataclass(frozen=True, eq=False)
class ParameterSeries:
    """Per-date transmission, recovery and mortality rates.

    Undefined entries (``defined`` false) hold NaN.  ``clamped`` marks
    entries whose raw extracted value was negative and was set to 0.
    """

    dates: np.ndarray
    beta: np.ndarray
    gamma_r: np.ndarray
    gamma_d: np.ndarray
    defined: np.ndarray
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        for name in ("beta", "gamma_r", "gamma_d"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "defined", _frozen(self.defined, bool))
        clamped = self.clamped
        if clamped is None:
            clamped = np.zeros((len(self.dates), 3), dtype=bool)
        object.__setattr__(self, "clamped", _frozen(clamped, bool))
        lengths = {len(self.dates), len(self.beta), len(self.gamma_r),
                   len(self.gamma_d), len(self.defined), len(self.clamped)}
        if len(lengths) != 1:
            raise StructuralError("parameter series fields differ in length")

    def __len__(self):
        return len(self.dates)

    def __getitem__(self, name) -> np.ndarray:
        if name not in ("beta", "gamma_r", "gamma_d"):
            raise KeyError(name)
        return getattr(self, name)


def validate_series(series: CompartmentSeries) -> list:
    """Return the anomalies found in ``series`` without modifying it.

    Raises
    ------
    StructuralError
        If the date and compartment arrays differ in length.
    """
    arrays = [series.S, series.I, series.R, series.D, series.total_cases]
    if any(len(a) != len(series.dates) for a in arrays):
        raise StructuralError(
            f"{series.unit.unit_id}: series fields differ in length")
    uid = series.unit.unit_id
    n = series.n
    tol = CONSERVATION_RTOL * n
    out = []

    gaps = np.nonzero(np.diff(series.dates) != ONE_DAY)[0]
    for k in gaps:
        out.append(Anomaly(uid, series.dates[k + 1], AnomalyKind.DATE_GAP,
                           f"previous date {series.dates[k]}"))

    for name in ("S", "I", "R", "D", "T"):
        values = series.total_cases if name == "T" else getattr(series, name)
        for k in np.nonzero(values < 0)[0]:
            out.append(Anomaly(uid, series.dates[k], AnomalyKind.NEGATIVE_VALUE,
                               f"{name}={values[k]:g}"))

    for name, values in (("T", series.total_cases), ("R", series.R), ("D", series.D)):
        steps = np.diff(values)
        for k in np.nonzero(steps < 0)[0]:
            out.append(Anomaly(uid, series.dates[k + 1],
                               AnomalyKind.NEGATIVE_INCREMENT,
                               f"{name} decreased by {-steps[k]:g}"))

    excess = series.S + series.I + series.R + series.D - n
    for k in np.nonzero(np.abs(excess) > tol)[0]:
        out.append(Anomaly(uid, series.dates[k], AnomalyKind.CONSERVATION_VIOLATION,
                           f"S+I+R+D-n={excess[k]:g}"))

    mismatch = series.total_cases - (series.I + series.R + series.D)
    for k in np.nonzero(np.abs(mismatch) > tol)[0]:
        out.append(Anomaly(uid, series.dates[k], AnomalyKind.TOTAL_MISMATCH,
                           f"T-(I+R+D)={mismatch[k]:g}"))
    return out


def generate_synthetic(n, initial: SirdState, beta_path: Sequence[float],
                       gamma_r_path: Sequence[float], gamma_d_path: Sequence[float],
                       unit: Optional[GeoUnit] = None,
                       start="2020-02-24") -> CompartmentSeries:
    """Step the discrete SIRD difference equations along given rate paths.

    The trajectory has one more point than the paths.  No flooring is
    applied: paths that would drive a compartment negative are rejected, so
    the output is the exact solution of the difference equations.

    Examples
    --------
    >>> s = generate_synthetic(1000, SirdState(990, 10, 0, 0, 1000),
    ...                        [0.3], [0.1], [0.05])
    >>> round(float(s.I[1]), 10)
    11.47
    """
    beta = np.asarray(beta_path, dtype=float)
    gr = np.asarray(gamma_r_path, dtype=float)
    gd = np.asarray(gamma_d_path, dtype=float)
    if not (beta.ndim == gr.ndim == gd.ndim == 1) or not (len(beta) == len(gr) == len(gd)):
        raise InvalidInput("rate paths must be 1-d and of equal length")
    if len(beta) < 1:
        raise InvalidInput("rate paths must have at least one entry")
    if np.any(beta < 0) or np.any(gr < 0) or np.any(gd < 0):
        raise InvalidInput("rates must be non-negative")
    if not np.all(np.isfinite(beta) & np.isfinite(gr) & np.isfinite(gd)):
        raise InvalidInput("rates must be finite")
    if initial.n != n:
        raise InvalidInput(f"initial state population {initial.n} != n={n}")
    if unit is None:
        unit = GeoUnit("synthetic", level=Level.REGION, population=n)
    elif unit.population != n:
        raise InvalidInput("unit population differs from n")

    steps = len(beta)
    S = np.empty(steps + 1)
    I = np.empty(steps + 1)
    R = np.empty(steps + 1)
    D = np.empty(steps + 1)
    S[0], I[0], R[0], D[0] = initial.s, initial.i, initial.r, initial.d
    for t in range(steps):
        new_inf = beta[t] * S[t] * I[t] / n
        S[t + 1] = S[t] - new_inf
        I[t + 1] = I[t] + new_inf - (gr[t] + gd[t]) * I[t]
        R[t + 1] = R[t] + gr[t] * I[t]
        D[t + 1] = D[t] + gd[t] * I[t]
        if S[t + 1] < 0 or I[t + 1] < 0:
            raise InvalidInput(f"rate paths drive a compartment negative at step {t}")
    dates = as_dates(start) + np.arange(steps + 1)
    return CompartmentSeries.from_compartments(unit, dates, S, I, R, D)
