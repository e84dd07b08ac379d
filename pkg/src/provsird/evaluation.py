"""Rolling-origin backtests and forecast error metrics.

A backtest re-trains and forecasts every province on every day of a window
and records one ledger row per (province, day, horizon, variable).  Metrics
are percentage errors relative to the actual value; rows whose actual is 0
are excluded from them.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .data_model import CompartmentSeries, GeoUnit, Level, as_dates
from .exceptions import (InsufficientData, InsufficientVariation, InvalidInput,
                         UndefinedMetric)
from .forecast import ForecastConfig, forecast_province
from .training import AggregationMode

logger = logging.getLogger(__name__)

__all__ = [
    "VARIABLES",
    "LEDGER_COLUMNS",
    "BacktestSpec",
    "BacktestResult",
    "DistributionStats",
    "Clusters",
    "run_backtest",
    "mape",
    "mape_by_province",
    "mpe_by_province",
    "distribution_stats",
    "mape_table",
    "mpe_distribution",
    "cluster_provinces",
    "quartile_by_horizon",
    "max_horizon",
    "max_horizon_from_quartiles",
    "write_reports",
]

VARIABLES = ("I", "R", "D", "T")
LEDGER_COLUMNS = ["province", "as_of", "horizon", "variable", "predicted", "actual"]


@dataclass(frozen=True)
class BacktestSpec:
    start_date: np.datetime64
    end_date: np.datetime64
    horizons: tuple = tuple(range(1, 16))
    training_mode: AggregationMode = AggregationMode.REGIONAL
    variables: tuple = VARIABLES
    provinces: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "start_date", as_dates(self.start_date))
        object.__setattr__(self, "end_date", as_dates(self.end_date))
        if self.end_date < self.start_date:
            raise InvalidInput("end_date precedes start_date")
        horizons = self.horizons
        if np.isscalar(horizons):
            horizons = range(1, int(horizons) + 1)
        horizons = tuple(sorted(int(h) for h in horizons))
        if not horizons or horizons[0] < 1:
            raise InvalidInput("horizons must be a non-empty set of positive days")
        object.__setattr__(self, "horizons", horizons)
        object.__setattr__(self, "training_mode", AggregationMode(self.training_mode))
        bad = set(self.variables) - set(VARIABLES)
        if bad or not self.variables:
            raise InvalidInput(f"variables must be a non-empty subset of {VARIABLES}")
        if self.provinces is not None:
            object.__setattr__(self, "provinces", tuple(self.provinces))

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start_date, self.end_date + np.timedelta64(1, "D"))


@dataclass
class BacktestResult:
    ledger: pd.DataFrame
    skipped: list = field(default_factory=list)
    mode: str = "regional"


def _actual(series: CompartmentSeries, idx, variable):
    if variable == "T":
        return float(series.total_cases[idx])
    return float(getattr(series, variable)[idx])


def _backtest_day(args):
    as_of, spec, units, dataset, config, provinces = args
    config = ForecastConfig(max(spec.horizons), config.search, spec.training_mode,
                            config.window, max(config.max_horizon, max(spec.horizons)))
    cache, rows, skipped = {}, [], []
    for pid in provinces:
        series = dataset[pid]
        last_needed = as_of + np.timedelta64(max(spec.horizons), "D")
        if series.dates[-1] < last_needed:
            skipped.append({"province": pid, "as_of": str(as_of),
                            "reason": f"no actuals through {last_needed}"})
            continue
        try:
            result, _ = forecast_province(pid, units, dataset, config, as_of, cache=cache)
        except InsufficientData as exc:
            skipped.append({"province": pid, "as_of": str(as_of), "reason": str(exc)})
            continue
        base = int(np.searchsorted(series.dates, as_of))
        for h in spec.horizons:
            state = result.states[h - 1]
            for var in spec.variables:
                pred = state.total_cases if var == "T" else getattr(state, var.lower())
                rows.append((pid, str(as_of), h, var, float(pred),
                             _actual(series, base + h, var)))
    return rows, skipped


def run_backtest(spec: BacktestSpec, units: Mapping[str, GeoUnit],
                 dataset: Mapping[str, CompartmentSeries],
                 config: Optional[ForecastConfig] = None,
                 workers: Optional[int] = 1) -> BacktestResult:
    """Forecast every province on every day of the window.

    Models are re-trained for each day, so lag and penalties may change from
    day to day and between provinces.  Provinces that cannot be forecast on
    a day are listed in ``skipped``; they do not abort the run.  Output
    order does not depend on ``workers``.
    """
    config = config or ForecastConfig()
    if spec.provinces is not None:
        provinces = list(spec.provinces)
        unknown = [p for p in provinces if p not in units]
        if unknown:
            raise InvalidInput(f"unknown provinces: {unknown}")
    else:
        provinces = sorted(uid for uid, u in units.items() if u.level is Level.PROVINCE)
    skipped = [{"province": p, "as_of": "", "reason": "no usable series"}
               for p in provinces if p not in dataset]
    provinces = [p for p in provinces if p in dataset]
    jobs = [(day, spec, units, dataset, config, provinces) for day in spec.days]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outputs = list(pool.map(_backtest_day, jobs))
    else:
        outputs = [_backtest_day(job) for job in jobs]
    rows = [r for out, _ in outputs for r in out]
    skipped += [s for _, sk in outputs for s in sk]
    ledger = pd.DataFrame(rows, columns=LEDGER_COLUMNS)
    return BacktestResult(ledger, skipped, spec.training_mode.value)


def _select(ledger, horizon, variable, province=None):
    mask = (ledger["horizon"] == horizon) & (ledger["variable"] == variable)
    if province is not None:
        mask &= ledger["province"] == province
    rows = ledger.loc[mask]
    eligible = rows["actual"] != 0
    return rows.loc[eligible], int((~eligible).sum())


def _percentage_errors(rows):
    actual = rows["actual"].to_numpy(dtype=float)
    return (actual - rows["predicted"].to_numpy(dtype=float)) / actual


def _mean_percent(values):
    # fsum keeps averages of identical terms exact
    return 100.0 * math.fsum(values) / len(values)


def mape(ledger: pd.DataFrame, horizon: int, variable: str) -> float:
    """``100/(P D) * sum |Y - Yhat| / Y`` over all provinces and days."""
    rows, _ = _select(ledger, horizon, variable)
    if rows.empty:
        raise UndefinedMetric(f"no eligible rows for horizon {horizon}, {variable}")
    return _mean_percent(np.abs(_percentage_errors(rows)))


def mape_by_province(ledger, horizon, province, variable) -> float:
    rows, _ = _select(ledger, horizon, variable, province)
    if rows.empty:
        raise UndefinedMetric(f"no eligible rows for {province}, horizon {horizon}, {variable}")
    return _mean_percent(np.abs(_percentage_errors(rows)))


def mpe_by_province(ledger, horizon, province, variable) -> float:
    """Signed mean percentage error; positive when the forecast is too low."""
    rows, _ = _select(ledger, horizon, variable, province)
    if rows.empty:
        raise UndefinedMetric(f"no eligible rows for {province}, horizon {horizon}, {variable}")
    return _mean_percent(_percentage_errors(rows))


class DistributionStats(NamedTuple):
    mean: float
    sd: float
    skewness: float
    kurtosis: float


def distribution_stats(values) -> DistributionStats:
    """Mean, sample sd (n-1), moment skewness and non-excess kurtosis."""
    x = np.asarray(values, dtype=float)
    if len(x) < 3:
        raise InsufficientData("distribution statistics need at least 3 values",
                               required=3, available=len(x))
    if np.ptp(x) == 0:
        raise InsufficientVariation("constant sample has no skewness or kurtosis")
    return DistributionStats(float(np.mean(x)), float(np.std(x, ddof=1)),
                             float(stats.skew(x, bias=True)),
                             float(stats.kurtosis(x, fisher=False, bias=True)))


def _safe_stats(values):
    try:
        return distribution_stats(values)
    except (InsufficientData, InsufficientVariation):
        return None


def mape_table(ledger: pd.DataFrame, variables: Sequence[str] = VARIABLES) -> pd.DataFrame:
    """MAPE by horizon (rows) and variable (columns)."""
    horizons = sorted(ledger["horizon"].unique())
    records = []
    for h in horizons:
        rec = {"horizon": int(h)}
        excluded = 0
        for var in variables:
            rows, n_excl = _select(ledger, h, var)
            excluded += n_excl
            rec[f"mape_{var}"] = mape(ledger, h, var) if not rows.empty else np.nan
        rec["excluded_rows"] = excluded
        records.append(rec)
    return pd.DataFrame(records, columns=["horizon", *(f"mape_{v}" for v in variables),
                                          "excluded_rows"])


def _per_province(ledger, horizon, variable, metric):
    out = {}
    for pid in sorted(ledger["province"].unique()):
        try:
            out[pid] = metric(ledger, horizon, pid, variable)
        except UndefinedMetric:
            pass
    return out


def mpe_distribution(ledger: pd.DataFrame, variables: Sequence[str] = VARIABLES) -> pd.DataFrame:
    """Distribution of per-province MPE for each horizon and variable."""
    records = []
    for h in sorted(ledger["horizon"].unique()):
        for var in variables:
            values = list(_per_province(ledger, h, var, mpe_by_province).values())
            st = _safe_stats(values)
            records.append({"horizon": int(h), "variable": var, "n_provinces": len(values),
                            **(st._asdict() if st else dict.fromkeys(DistributionStats._fields,
                                                                     np.nan))})
    return pd.DataFrame(records)


@dataclass
class Clusters:
    low: list
    mid: list
    high: list
    stats: dict

    def as_dict(self):
        out = {}
        for name in ("low", "mid", "high"):
            st = self.stats.get(name)
            out[name] = {"provinces": getattr(self, name), "count": len(getattr(self, name)),
                         **(st._asdict() if st else {})}
        return out


def cluster_provinces(weekly_mape: Mapping[str, float], low: float = 10.0,
                      high: float = 20.0) -> Clusters:
    """Split provinces into ``<= low``, ``(low, high]`` and ``> high`` MAPE groups."""
    groups = {"low": [], "mid": [], "high": []}
    for pid in sorted(weekly_mape):
        value = weekly_mape[pid]
        key = "low" if value <= low else "mid" if value <= high else "high"
        groups[key].append(pid)
    cluster_stats = {k: _safe_stats([weekly_mape[p] for p in v]) for k, v in groups.items()}
    return Clusters(groups["low"], groups["mid"], groups["high"], cluster_stats)


def quartile_by_horizon(ledger: pd.DataFrame, variable: str = "I",
                        quartile: float = 0.75) -> dict:
    """Quantile (linear interpolation) of per-province MAPE at each horizon."""
    out = {}
    for h in sorted(ledger["horizon"].unique()):
        values = list(_per_province(ledger, h, variable, mape_by_province).values())
        out[int(h)] = float(np.quantile(values, quartile)) if values else np.nan
    return out


def max_horizon_from_quartiles(quartiles: Sequence[float], bound: float = 20.0) -> int:
    """Longest prefix of horizons ``1, 2, ...`` whose quartile stays within ``bound``."""
    h = 0
    for q in quartiles:
        if not q <= bound:
            break
        h += 1
    return h


def max_horizon(ledger: pd.DataFrame, variable: str = "I", quartile: float = 0.75,
                bound: float = 20.0) -> int:
    """Largest horizon up to which the per-province MAPE quartile is ``<= bound``."""
    q = quartile_by_horizon(ledger, variable, quartile)
    horizons = sorted(q)
    if horizons and horizons != list(range(1, len(horizons) + 1)):
        raise InvalidInput("ledger horizons must be contiguous from 1")
    return max_horizon_from_quartiles([q[h] for h in horizons], bound)


def write_reports(result: BacktestResult, directory, week: int = 7) -> int:
    """Write the ledger and report files; returns the max horizon."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ledger = result.ledger
    present = set(ledger["variable"])
    variables = [v for v in VARIABLES if v in present] or list(VARIABLES)
    ledger.to_csv(directory / "ledger.csv", index=False, lineterminator="\n")
    mape_table(ledger, variables).to_csv(directory / "mape_by_horizon.csv", index=False,
                                         lineterminator="\n")
    mpe_distribution(ledger, variables).to_csv(directory / "mpe_distribution.csv", index=False,
                                    lineterminator="\n")
    weekly = _per_province(ledger, week, "I", mape_by_province) if not ledger.empty else {}
    clusters = cluster_provinces(weekly).as_dict()
    clusters["horizon"] = week
    with open(directory / "clusters.json", "w", encoding="utf-8") as fh:
        json.dump(clusters, fh, indent=2, sort_keys=True)
        fh.write("\n")
    pd.DataFrame(result.skipped, columns=["province", "as_of", "reason"]).to_csv(
        directory / "skipped.csv", index=False, lineterminator="\n")
    horizon = max_horizon(ledger) if "I" in present else 0
    (directory / "max_horizon.txt").write_text(f"{horizon}\n", encoding="utf-8")
    return horizon
