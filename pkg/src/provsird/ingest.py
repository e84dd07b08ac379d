"""CSV snapshot ingestion and assembly of compartment series.

Three snapshot layouts are read:

``province_cases``
    ``date,unit_id,region_id,population,total_cases``
``region_full``
    ``date,unit_id,population,total_cases,recovered,deaths``
``province_deaths``
    ``date,unit_id,deaths``

Provincial recovered counts are never observed; they are estimated from the
regional recovered share of total cases on the same day.
"""

from __future__ import annotations

import csv
import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .data_model import (Anomaly, AnomalyKind, CompartmentSeries, GeoUnit, Level,
                         as_dates, validate_series)
from .exceptions import (AlignmentError, ConsistencyError, InvalidInput, RowError,
                         SchemaError)

logger = logging.getLogger(__name__)

__all__ = [
    "Schema",
    "RepairPolicy",
    "RawCaseRecord",
    "Dataset",
    "Assembly",
    "SCHEMA_COLUMNS",
    "parse_csv",
    "load_dataset",
    "estimate_recovered",
    "clamp_monotone",
    "assemble",
    "write_anomalies",
    "write_series",
    "read_series",
]


class Schema(str, enum.Enum):
    PROVINCE_CASES = "province_cases"
    REGION_FULL = "region_full"
    PROVINCE_DEATHS = "province_deaths"


class RepairPolicy(str, enum.Enum):
    NONE = "none"
    CLAMP_MONOTONE = "clamp_monotone"


SCHEMA_COLUMNS = {
    Schema.PROVINCE_CASES: ("date", "unit_id", "region_id", "population", "total_cases"),
    Schema.REGION_FULL: ("date", "unit_id", "population", "total_cases", "recovered", "deaths"),
    Schema.PROVINCE_DEATHS: ("date", "unit_id", "deaths"),
}
_NUMERIC = ("population", "total_cases", "recovered", "deaths")


@dataclass(frozen=True)
class RawCaseRecord:
    date: np.datetime64
    unit_id: str
    total_cases: Optional[float] = None
    deaths: Optional[float] = None
    recovered: Optional[float] = None
    region_id: Optional[str] = None
    population: Optional[float] = None


def _number(text, column, row_index, path):
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise RowError(row_index, f"{column}={text!r} is not a number", path) from None


def parse_csv(path, schema) -> list:
    """Read a snapshot file into records, one per data row.

    Values are not judged here (a negative count is kept as is); unknown
    columns are ignored.  Row indices in errors count data rows from 1.
    """
    schema = Schema(schema)
    path = Path(path)
    required = SCHEMA_COLUMNS[schema]
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for column in required:
            if column not in header:
                raise SchemaError(column, str(path))
        reader.fieldnames = header
        for idx, row in enumerate(reader, start=1):
            try:
                date = np.datetime64(row["date"].strip(), "D")
            except (ValueError, AttributeError):
                raise RowError(idx, f"date={row['date']!r} is not an ISO date", str(path)) from None
            values = {c: _number(row[c] or "", c, idx, str(path))
                      for c in required if c in _NUMERIC}
            unit_id = (row["unit_id"] or "").strip()
            if not unit_id:
                raise RowError(idx, "empty unit_id", str(path))
            region = (row.get("region_id") or "").strip() or None
            records.append(RawCaseRecord(date, unit_id, region_id=region, **values))
    return records


@dataclass
class Dataset:
    """Units and their raw records, keyed by unit id."""

    units: dict
    records: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.records) - set(self.units)
        if unknown:
            raise InvalidInput(f"records for unknown units: {sorted(unknown)}")

    def provinces(self):
        return [u for u in self.units.values() if u.level is Level.PROVINCE]

    def regions(self):
        return [u for u in self.units.values() if u.level is Level.REGION]


def _merge(existing: Optional[RawCaseRecord], new: RawCaseRecord):
    if existing is None:
        return new
    updates = {k: getattr(new, k) for k in ("total_cases", "deaths", "recovered",
                                            "region_id", "population")
               if getattr(new, k) is not None}
    return replace(existing, **updates)


def load_dataset(province_cases, region_full, province_deaths=None) -> Dataset:
    """Parse the three snapshot files and merge them per unit and date."""
    units = {}
    by_unit = defaultdict(dict)

    for rec in parse_csv(region_full, Schema.REGION_FULL):
        if rec.unit_id not in units:
            units[rec.unit_id] = GeoUnit(rec.unit_id, level=Level.REGION,
                                         population=_population(rec))
        by_unit[rec.unit_id][rec.date] = _merge(by_unit[rec.unit_id].get(rec.date), rec)

    for rec in parse_csv(province_cases, Schema.PROVINCE_CASES):
        if rec.unit_id not in units:
            if rec.region_id not in units:
                raise InvalidInput(
                    f"province {rec.unit_id!r} refers to unknown region {rec.region_id!r}")
            units[rec.unit_id] = GeoUnit(rec.unit_id, level=Level.PROVINCE,
                                         parent_id=rec.region_id,
                                         population=_population(rec))
        by_unit[rec.unit_id][rec.date] = _merge(by_unit[rec.unit_id].get(rec.date), rec)

    if province_deaths is not None:
        for rec in parse_csv(province_deaths, Schema.PROVINCE_DEATHS):
            if rec.unit_id not in units:
                raise InvalidInput(f"deaths reported for unknown unit {rec.unit_id!r}")
            by_unit[rec.unit_id][rec.date] = _merge(by_unit[rec.unit_id].get(rec.date), rec)

    records = {uid: [recs[d] for d in sorted(recs)] for uid, recs in by_unit.items()}
    return Dataset(units, records)


def _population(rec):
    if rec.population is None:
        raise InvalidInput(f"{rec.unit_id}: missing population")
    return int(round(rec.population))


def estimate_recovered(province_total, region_recovered, region_total):
    """Provincial recovered ``T_p * R_reg / T_reg``; 0 where ``T_reg`` is 0.

    All three inputs are arrays on the same dates, or
    :class:`pandas.Series` indexed by date (their indices must match).
    """
    inputs = (province_total, region_recovered, region_total)
    if all(isinstance(x, pd.Series) for x in inputs):
        if not all(inputs[0].index.equals(x.index) for x in inputs[1:]):
            raise AlignmentError("province and region series are on different dates")
    tp, rr, tr = (np.asarray(x, dtype=float) for x in (province_total, region_recovered,
                                                       region_total))
    if not (tp.shape == rr.shape == tr.shape):
        raise AlignmentError("province and region series differ in length")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(tr != 0, tp * rr / np.where(tr != 0, tr, 1.0), 0.0)
    if isinstance(province_total, pd.Series):
        return pd.Series(out, index=province_total.index)
    return out


def clamp_monotone(values):
    """Replace every decrease by the running maximum.

    Returns ``(repaired, changed_indices)``.
    """
    values = np.asarray(values, dtype=float)
    repaired = np.maximum.accumulate(values)
    return repaired, np.nonzero(repaired != values)[0]


@dataclass
class Assembly:
    """Output of :func:`assemble`.

    ``series`` maps unit ids to assembled series, ``anomalies`` lists every
    repair and validation finding, ``unusable`` maps skipped unit ids to the
    reason.
    """

    series: dict
    anomalies: list = field(default_factory=list)
    unusable: dict = field(default_factory=dict)

    def __getitem__(self, unit_id) -> CompartmentSeries:
        return self.series[unit_id]

    def __contains__(self, unit_id):
        return unit_id in self.series


def _column(records, name):
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                     for r in records], dtype=float)


def _fill_gaps(unit_id, records, policy, anomalies):
    """Calendar-complete records; gaps are forward-filled under clamp_monotone."""
    dates = np.array([r.date for r in records], dtype="datetime64[D]")
    if len(dates) == 0:
        return dates, records
    full = np.arange(dates[0], dates[-1] + np.timedelta64(1, "D"))
    if len(full) == len(dates):
        return dates, records
    missing = np.setdiff1d(full, dates)
    for d in missing:
        anomalies.append(Anomaly(unit_id, d, AnomalyKind.DATE_GAP, "no record"))
    if policy is not RepairPolicy.CLAMP_MONOTONE:
        return None, None
    by_date = {r.date: r for r in records}
    out, last = [], None
    for d in full:
        rec = by_date.get(d)
        if rec is None:
            rec = replace(last, date=d)
            anomalies.append(Anomaly(unit_id, d, AnomalyKind.REPAIR, "carried forward"))
        out.append(rec)
        last = rec
    return full, out


def _repair(unit_id, name, values, dates, policy, anomalies):
    if policy is not RepairPolicy.CLAMP_MONOTONE:
        return values
    repaired, changed = clamp_monotone(values)
    for k in changed:
        anomalies.append(Anomaly(unit_id, dates[k], AnomalyKind.REPAIR,
                                 f"{name} {values[k]:g} -> {repaired[k]:g}"))
    return repaired


def _forward_fill(values):
    out = values.copy()
    for k in range(1, len(out)):
        if np.isnan(out[k]):
            out[k] = out[k - 1]
    return out


def _assemble_region(unit, records, policy, anomalies):
    dates, records = _fill_gaps(unit.unit_id, records, policy, anomalies)
    if dates is None:
        return None, "date gaps"
    cols = {}
    for name in ("total_cases", "recovered", "deaths"):
        col = _column(records, name)
        if np.any(np.isnan(col)):
            return None, f"missing {name}"
        cols[name] = _repair(unit.unit_id, name, col, dates, policy, anomalies)
    T, R, D = cols["total_cases"], cols["recovered"], cols["deaths"]
    return _build(unit, dates, T, R, D), None


def _assemble_province(unit, records, region: CompartmentSeries, policy, anomalies):
    uid = unit.unit_id
    dates, records = _fill_gaps(uid, records, policy, anomalies)
    if dates is None:
        return None, "date gaps"
    T = _column(records, "total_cases")
    D = _column(records, "deaths")
    if np.all(np.isnan(D)):
        return None, "no death data"
    if np.any(np.isnan(T)):
        return None, "missing total_cases"
    if np.any(np.isnan(D)):
        if policy is not RepairPolicy.CLAMP_MONOTONE or np.isnan(D[0]):
            return None, "incomplete death data"
        for k in np.nonzero(np.isnan(D))[0]:
            anomalies.append(Anomaly(uid, dates[k], AnomalyKind.REPAIR, "deaths carried forward"))
        D = _forward_fill(D)
    T = _repair(uid, "total_cases", T, dates, policy, anomalies)
    D = _repair(uid, "deaths", D, dates, policy, anomalies)
    R = _column(records, "recovered")
    if np.any(np.isnan(R)):
        try:
            reg = region.on(dates)
        except Exception:
            raise AlignmentError(f"{uid}: region {region.unit.unit_id} does not cover "
                                 f"{dates[0]}..{dates[-1]}") from None
        R = estimate_recovered(T, reg.R, reg.total_cases)
    R = _repair(uid, "recovered", R, dates, policy, anomalies)
    return _build(unit, dates, T, R, D), None


def _build(unit, dates, T, R, D):
    I = T - R - D
    bad = np.nonzero(I < -1e-9 * unit.population)[0]
    if len(bad):
        k = bad[0]
        raise ConsistencyError(
            f"{unit.unit_id}: recovered + deaths exceed total cases on {dates[k]} "
            f"(I={I[k]:g})", unit.unit_id, dates[k])
    I = np.maximum(I, 0.0)
    S = unit.population - T
    return CompartmentSeries(unit, dates, S, I, R, D, I + R + D)


def assemble(dataset: Dataset, repair=RepairPolicy.CLAMP_MONOTONE) -> Assembly:
    """Build validated compartment series for every region and province.

    ``S = n - T``, ``I = T - R - D``; provincial ``R`` comes from
    :func:`estimate_recovered`.  Provinces without death data are marked
    unusable rather than imputed.

    Raises
    ------
    ConsistencyError
        If estimated recovered plus deaths exceed total cases on some day.
    """
    policy = RepairPolicy(repair)
    anomalies, unusable, series = [], {}, {}
    for unit in sorted(dataset.regions(), key=lambda u: u.unit_id):
        built, reason = _assemble_region(unit, dataset.records.get(unit.unit_id, []),
                                         policy, anomalies)
        if built is None:
            unusable[unit.unit_id] = reason
        else:
            series[unit.unit_id] = built
    for unit in sorted(dataset.provinces(), key=lambda u: u.unit_id):
        recs = dataset.records.get(unit.unit_id, [])
        if not recs:
            unusable[unit.unit_id] = "no records"
            continue
        region = series.get(unit.parent_id)
        if region is None:
            unusable[unit.unit_id] = f"region {unit.parent_id} unusable"
            continue
        built, reason = _assemble_province(unit, recs, region, policy, anomalies)
        if built is None:
            unusable[unit.unit_id] = reason
        else:
            series[unit.unit_id] = built
    for uid, reason in unusable.items():
        anomalies.append(Anomaly(uid, None, AnomalyKind.UNUSABLE, reason))
    for uid in sorted(series):
        anomalies.extend(validate_series(series[uid]))
    anomalies.extend(_source_discrepancies(dataset, series))
    return Assembly(series, anomalies, unusable)


def _source_discrepancies(dataset, series):
    """Compare summed provincial deaths with the regional total.

    Only regions whose provinces all have series are checked.
    """
    out = []
    children = defaultdict(list)
    for unit in dataset.provinces():
        children[unit.parent_id].append(unit.unit_id)
    for region_id, kids in sorted(children.items()):
        if region_id not in series or not all(k in series for k in kids):
            continue
        region = series[region_id]
        for k, date in enumerate(region.dates):
            total = 0.0
            for kid in kids:
                s = series[kid]
                idx = np.searchsorted(s.dates, date)
                if idx >= len(s) or s.dates[idx] != date:
                    break
                total += s.D[idx]
            else:
                if total != region.D[k]:
                    out.append(Anomaly(region_id, date, AnomalyKind.SOURCE_DISCREPANCY,
                                       f"provincial deaths {total:g} vs regional {region.D[k]:g}"))
    return out


def write_anomalies(anomalies, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["unit_id", "date", "kind", "detail"],
                                lineterminator="\n")
        writer.writeheader()
        for a in anomalies:
            writer.writerow(a.as_row())


SERIES_COLUMNS = ("date", "S", "I", "R", "D", "T")
UNIT_COLUMNS = ("unit_id", "name", "level", "parent_id", "population")


def write_series(series: Mapping[str, CompartmentSeries], directory,
                 units: Optional[Mapping[str, GeoUnit]] = None):
    """Write ``units.csv`` and one ``series/<unit_id>.csv`` per assembled unit.

    ``units`` lists every known unit, including those without a series;
    by default only the units of ``series`` are listed.
    """
    directory = Path(directory)
    (directory / "series").mkdir(parents=True, exist_ok=True)
    if units is None:
        units = {uid: s.unit for uid, s in series.items()}
    with open(directory / "units.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(UNIT_COLUMNS)
        for uid in sorted(units):
            u = units[uid]
            writer.writerow([u.unit_id, u.name, u.level.value, u.parent_id or "", u.population])
    for uid in sorted(series):
        s = series[uid]
        with open(directory / "series" / f"{uid}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SERIES_COLUMNS)
            for k in range(len(s)):
                writer.writerow([str(s.dates[k]), repr(float(s.S[k])), repr(float(s.I[k])),
                                 repr(float(s.R[k])), repr(float(s.D[k])),
                                 repr(float(s.total_cases[k]))])


def read_series(directory):
    """Inverse of :func:`write_series`; returns ``(units, series)``."""
    directory = Path(directory)
    units = {}
    with open(directory / "units.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            units[row["unit_id"]] = GeoUnit(row["unit_id"], row["name"], row["level"],
                                            row["parent_id"] or None, int(row["population"]))
    series = {}
    for uid, unit in units.items():
        path = directory / "series" / f"{uid}.csv"
        if not path.is_file():
            continue
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        dates = as_dates([r["date"] for r in rows])
        cols = {c: np.array([float(r[c]) for r in rows]) for c in SERIES_COLUMNS[1:]}
        series[uid] = CompartmentSeries(unit, dates, cols["S"], cols["I"], cols["R"],
                                        cols["D"], cols["T"])
    return units, series
