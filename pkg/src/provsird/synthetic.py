"""Synthetic multi-province epidemics for tests, demos and acceptance runs.

Provinces are grouped into regions.  Each region has its own onset and
lockdown day; its transmission rate drops along a logistic curve and carries
shared AR(1) noise, and provinces add their own AR(1) deviations.  Province
trajectories come from :func:`~provsird.data_model.generate_synthetic`;
cumulative counts are rounded to whole persons as in real bulletins and
regions are the sums of their provinces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import GeoUnit, Level, SirdState, as_dates, generate_synthetic
from .ingest import Dataset, RawCaseRecord, load_dataset

__all__ = ["World", "make_world", "ar1_noise"]


def ar1_noise(rng, length, phi, sd):
    """Stationary AR(1) sample path with innovation sd ``sd``."""
    out = np.empty(length)
    out[0] = rng.normal(0.0, sd / np.sqrt(1 - phi ** 2))
    for t in range(1, length):
        out[t] = phi * out[t - 1] + rng.normal(0.0, sd)
    return out


@dataclass
class World:
    units: dict
    truth: dict
    province_cases: list
    region_full: list
    province_deaths: list
    start: np.datetime64

    @property
    def provinces(self):
        return sorted(u for u, unit in self.units.items() if unit.level is Level.PROVINCE)

    @property
    def regions(self):
        return sorted(u for u, unit in self.units.items() if unit.level is Level.REGION)

    def dataset(self) -> Dataset:
        records = {}
        for rec in self.region_full + self.province_cases:
            records.setdefault(rec.unit_id, {})[rec.date] = rec
        for rec in self.province_deaths:
            base = records[rec.unit_id][rec.date]
            records[rec.unit_id][rec.date] = RawCaseRecord(
                base.date, base.unit_id, base.total_cases, rec.deaths, base.recovered,
                base.region_id, base.population)
        return Dataset(dict(self.units),
                       {uid: [recs[d] for d in sorted(recs)] for uid, recs in records.items()})

    def write_csv(self, directory):
        """Write ``province_cases.csv``, ``region_full.csv`` and ``province_deaths.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        specs = {
            "province_cases.csv": (self.province_cases,
                                   ("date", "unit_id", "region_id", "population", "total_cases")),
            "region_full.csv": (self.region_full,
                                ("date", "unit_id", "population", "total_cases", "recovered",
                                 "deaths")),
            "province_deaths.csv": (self.province_deaths, ("date", "unit_id", "deaths")),
        }
        paths = {}
        for name, (records, columns) in specs.items():
            path = directory / name
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for rec in records:
                    writer.writerow([_fmt(getattr(rec, c)) for c in columns])
            paths[name.removesuffix(".csv")] = path
        return paths

    def reload(self, directory):
        paths = self.write_csv(directory)
        return load_dataset(paths["province_cases"], paths["region_full"],
                            paths["province_deaths"])


def _fmt(value):
    if isinstance(value, np.datetime64):
        return str(value)
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return "" if value is None else str(value)


def make_world(seed=0, n_provinces=20, n_regions=5, days=60, start="2020-02-24",
               noise=0.08) -> World:
    """Generate a reproducible world of ``n_provinces`` over ``days`` days.

    ``noise`` is the innovation sd of the multiplicative AR(1) disturbance on
    the transmission rate (shared per region plus per province).
    """
    rng = np.random.default_rng(seed)
    start = as_dates(start)
    steps = days - 1
    t = np.arange(steps)
    units, truth = {}, {}
    province_cases, province_deaths = [], []
    region_totals = {}

    region_ids = [f"R{k:02d}" for k in range(n_regions)]
    assignment = [region_ids[k % n_regions] for k in range(n_provinces)]
    region_params = {}
    for rid in region_ids:
        lockdown = rng.uniform(12, 28)
        early, late = rng.uniform(0.28, 0.38), rng.uniform(0.06, 0.11)
        beta = late + (early - late) / (1 + np.exp((t - lockdown) / 3.0))
        beta *= np.exp(ar1_noise(rng, steps, 0.7, noise))
        gr = np.linspace(rng.uniform(0.02, 0.03), rng.uniform(0.05, 0.07), steps)
        gd = np.linspace(rng.uniform(0.012, 0.02), rng.uniform(0.004, 0.008), steps)
        region_params[rid] = (beta, gr, gd)

    for k in range(n_provinces):
        pid, rid = f"P{k:02d}", assignment[k]
        n = int(rng.integers(100_000, 1_200_000))
        unit = GeoUnit(pid, f"Province {k}", Level.PROVINCE, rid, n)
        units[pid] = unit
        beta_r, gr_r, gd_r = region_params[rid]
        beta = beta_r * np.exp(ar1_noise(rng, steps, 0.7, noise / 2))
        gr = gr_r * rng.uniform(0.9, 1.1)
        gd = gd_r * rng.uniform(0.8, 1.2)
        i0 = float(rng.integers(30, 150))
        series = generate_synthetic(n, SirdState(n - i0, i0, 0.0, 0.0, n), beta, gr, gd,
                                    unit=unit, start=start)
        truth[pid] = series
        T = np.round(series.total_cases)
        R = np.round(series.R)
        D = np.round(series.D)
        acc = region_totals.setdefault(rid, [0, np.zeros(days), np.zeros(days), np.zeros(days)])
        acc[0] += n
        acc[1] += T
        acc[2] += R
        acc[3] += D
        for j, date in enumerate(series.dates):
            province_cases.append(RawCaseRecord(date, pid, float(T[j]), region_id=rid,
                                                population=float(n)))
            province_deaths.append(RawCaseRecord(date, pid, deaths=float(D[j])))

    region_full = []
    for rid in region_ids:
        n, T, R, D = region_totals[rid]
        units[rid] = GeoUnit(rid, f"Region {rid}", Level.REGION, None, n)
        for j in range(days):
            region_full.append(RawCaseRecord(start + j, rid, float(T[j]), float(D[j]),
                                             float(R[j]), population=float(n)))
    province_cases.sort(key=lambda r: (r.date, r.unit_id))
    province_deaths.sort(key=lambda r: (r.date, r.unit_id))
    region_full.sort(key=lambda r: (r.date, r.unit_id))
    return World(units, truth, province_cases, region_full, province_deaths, start)
