"""Correlation-based pooling of peer units into one training series.

A province is trained on the pooled data of the units (regions or provinces)
whose recent per-capita new-case curves correlate with its reference unit
above the median.  Recent days dominate the correlation through exponential
weights ``exp(30 - d)`` for an observation ``d`` days old; the constant 30
cancels once the weights are normalised.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .data_model import CompartmentSeries, GeoUnit, Level, as_dates
from .exceptions import AlignmentError, InvalidInput, UndefinedCorrelation

logger = logging.getLogger(__name__)

__all__ = [
    "AggregationMode",
    "AggregationSpec",
    "WeightVector",
    "time_weights",
    "weighted_correlation",
    "new_cases_per_capita",
    "peer_correlations",
    "select_peers",
    "aggregate_training_series",
    "build_training_set",
]

WEIGHT_OFFSET = 30.0


class AggregationMode(str, enum.Enum):
    REGIONAL = "regional"
    PROVINCIAL = "provincial"


@dataclass(frozen=True)
class AggregationSpec:
    """How to pick peers for one province on one day.

    ``reference_unit`` is the province's region in regional mode and the
    province itself in provincial mode; :meth:`for_province` builds either.
    """

    mode: AggregationMode
    reference_unit: GeoUnit
    as_of: np.datetime64
    window: Optional[int] = None

    def __post_init__(self):
        mode = AggregationMode(self.mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "as_of", as_dates(self.as_of))
        expected = Level.REGION if mode is AggregationMode.REGIONAL else Level.PROVINCE
        if self.reference_unit.level is not expected:
            raise InvalidInput(
                f"{mode.value} aggregation needs a {expected.value} reference, "
                f"got {self.reference_unit.level.value} {self.reference_unit.unit_id!r}")
        if self.window is not None and self.window < 2:
            raise InvalidInput("correlation window must span at least 2 days")

    @classmethod
    def for_province(cls, mode, province: GeoUnit, units: Mapping[str, GeoUnit],
                     as_of, window=None):
        mode = AggregationMode(mode)
        if mode is AggregationMode.REGIONAL:
            try:
                ref = units[province.parent_id]
            except KeyError:
                raise InvalidInput(
                    f"region {province.parent_id!r} of {province.unit_id!r} is unknown") from None
        else:
            ref = province
        return cls(mode, ref, as_of, window)

    @property
    def peer_level(self) -> Level:
        return self.reference_unit.level


@dataclass(frozen=True, eq=False)
class WeightVector:
    dates: np.ndarray
    weights: np.ndarray


def time_weights(current_day, dates) -> WeightVector:
    """Normalised weights ``exp(30 - d)``, ``d`` = days before ``current_day``.

    Exponents are shifted by their maximum before exponentiating, so very
    old observations underflow to tiny weights instead of overflowing.
    """
    dates = as_dates(dates)
    if dates.ndim == 0 or len(dates) == 0:
        raise InvalidInput("time weights need at least one date")
    current_day = as_dates(current_day)
    d = (current_day - dates).astype(int)
    if np.any(d < 0):
        raise InvalidInput("dates must not follow the current day")
    exponent = WEIGHT_OFFSET - d.astype(float)
    raw = np.exp(exponent - exponent.max())
    return WeightVector(dates, raw / raw.sum())


def _weighted_variance_is_zero(centered, w, x):
    var = np.sum(w * centered ** 2)
    scale = np.sum(w * x ** 2)
    return var <= (64 * np.finfo(float).eps) ** 2 * scale or var == 0.0


def weighted_correlation(x, y, w) -> float:
    """Weighted Pearson correlation of ``x`` and ``y``.

    ``w`` is a :class:`WeightVector` or a plain weight array.
    """
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (len(x) == len(y) == len(weights)):
        raise AlignmentError("x, y and weights must be aligned")
    if len(x) < 2:
        raise InvalidInput("correlation needs at least two points")
    weights = weights / weights.sum()
    xc = x - np.sum(weights * x)
    yc = y - np.sum(weights * y)
    if _weighted_variance_is_zero(xc, weights, x) or _weighted_variance_is_zero(yc, weights, y):
        raise UndefinedCorrelation("zero weighted variance")
    cov = np.sum(weights * xc * yc)
    rho = cov / np.sqrt(np.sum(weights * xc ** 2) * np.sum(weights * yc ** 2))
    return float(np.clip(rho, -1.0, 1.0))


def new_cases_per_capita(series: CompartmentSeries):
    """Daily new cases over population, negative recount steps floored at 0.

    Returns ``(dates, values)``; each value is dated on the later day of its
    difference.
    """
    new = np.maximum(np.diff(series.total_cases), 0.0)
    return series.dates[1:], new / series.n


def _windowed(dates, values, as_of, window):
    keep = dates <= as_of
    if window is not None:
        keep &= dates > as_of - np.timedelta64(window, "D")
    return dates[keep], values[keep]


def peer_correlations(reference: GeoUnit, candidates: Sequence[GeoUnit],
                      dataset: Mapping[str, CompartmentSeries], as_of,
                      window: Optional[int] = None) -> dict:
    """Time-weighted correlation of each candidate with the reference.

    Candidates whose correlation is undefined map to ``None``.
    """
    as_of = as_dates(as_of)
    ref_dates, ref_vals = _windowed(*new_cases_per_capita(dataset[reference.unit_id]),
                                    as_of, window)
    out = {}
    for unit in candidates:
        dates, vals = _windowed(*new_cases_per_capita(dataset[unit.unit_id]), as_of, window)
        common, ia, ib = np.intersect1d(ref_dates, dates, return_indices=True)
        if len(common) < 2:
            out[unit.unit_id] = None
            continue
        w = time_weights(as_of, common)
        try:
            out[unit.unit_id] = weighted_correlation(ref_vals[ia], vals[ib], w)
        except UndefinedCorrelation:
            out[unit.unit_id] = None
    return out


def select_peers(reference: GeoUnit, candidates: Sequence[GeoUnit],
                 dataset: Mapping[str, CompartmentSeries], as_of,
                 window: Optional[int] = None) -> list:
    """Candidates correlated with the reference strictly above the median.

    The reference is always part of the result and takes part in the median
    with its own self-correlation.  Output is sorted by unit id.  When fewer
    than two candidates have a defined correlation the reference is returned
    alone.
    """
    if reference.unit_id not in {u.unit_id for u in candidates}:
        candidates = [reference, *candidates]
    corr = peer_correlations(reference, candidates, dataset, as_of, window)
    defined = {uid: c for uid, c in corr.items() if c is not None}
    if len(defined) < 2:
        logger.warning("degenerate peer selection for %s on %s: %d defined correlations",
                       reference.unit_id, as_dates(as_of), len(defined))
        return [reference]
    median = float(np.median(list(defined.values())))
    chosen = {uid for uid, c in defined.items() if c > median}
    chosen.add(reference.unit_id)
    by_id = {u.unit_id: u for u in candidates}
    return [by_id[uid] for uid in sorted(chosen)]


def aggregate_training_series(peers: Sequence[GeoUnit],
                              dataset: Mapping[str, CompartmentSeries]) -> CompartmentSeries:
    """Sum the compartments and populations of ``peers`` on their common dates."""
    if not peers:
        raise InvalidInput("no peers to aggregate")
    peers = sorted(peers, key=lambda u: u.unit_id)
    series = [dataset[u.unit_id] for u in peers]
    if len(series) == 1:
        return series[0]
    common = series[0].dates
    for s in series[1:]:
        common = np.intersect1d(common, s.dates)
    if len(common) == 0:
        raise AlignmentError("peer series share no dates")
    parts = [s.on(common) for s in series]
    levels = {u.level for u in peers}
    parents = {u.parent_id for u in peers}
    level = levels.pop() if len(levels) == 1 else Level.NATION
    parent = parents.pop() if len(parents) == 1 else None
    if level is Level.PROVINCE and parent is None:
        # provinces from several regions pool into a supra-provincial unit
        level = Level.REGION
    unit = GeoUnit("+".join(u.unit_id for u in peers), level=level, parent_id=parent,
                   population=sum(u.population for u in peers))
    total = lambda name: np.sum([getattr(p, name) for p in parts], axis=0)  # noqa: E731
    return CompartmentSeries(unit, common, total("S"), total("I"), total("R"),
                             total("D"), total("total_cases"))


def build_training_set(spec: AggregationSpec, units: Mapping[str, GeoUnit],
                       dataset: Mapping[str, CompartmentSeries]):
    """Select peers for ``spec`` and pool their data up to ``spec.as_of``.

    Only units present in ``dataset`` and at the reference's level are
    candidates.  Returns ``(pooled_series, peers)``.
    """
    level = spec.peer_level
    truncated = {uid: s.until(spec.as_of) for uid, s in dataset.items()}
    candidates = [u for uid, u in sorted(units.items())
                  if u.level is level and uid in truncated]
    if spec.reference_unit.unit_id not in truncated:
        raise InvalidInput(f"no data for reference unit {spec.reference_unit.unit_id!r}")
    peers = select_peers(spec.reference_unit, candidates, truncated, spec.as_of, spec.window)
    return aggregate_training_series(peers, truncated), peers
