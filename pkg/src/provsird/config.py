"""Run configuration files.

A run is described by one YAML file.  Relative input paths are resolved
against the file's directory, a relative ``output`` against the working
directory.  Grammar (every section optional except
``inputs``)::

    inputs:
      province_cases: data/province_cases.csv
      region_full: data/region_full.csv
      province_deaths: data/province_deaths.csv
    output: runs/demo
    repair: clamp_monotone          # or: none
    workers: 1                      # omitted -> all CPUs
    forecast:
      horizon: 7
      max_horizon: 15
      mode: regional                # or: provincial
      window: null                  # correlation window in days
      lag_range: [1, 7]
      penalty_grid: [0.0001, 0.001, 0.01, 0.1, 1, 10, 100]
      cv_folds: 5
    backtest:
      start_date: 2020-03-25
      end_date: 2020-04-08
      horizons: 15
      modes: [regional, provincial]
      variables: [I, R, D, T]
    bootstrap:
      enabled: false
      replications: 1000
      alpha: 0.10
      seed: 20200408
      focus: beta
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import InvalidInput
from .forecast import ForecastConfig
from .ingest import RepairPolicy
from .regression import DEFAULT_PENALTY_GRID, HyperparameterSearchSpace
from .training import AggregationMode
from .uncertainty import DEFAULT_ALPHA, DEFAULT_REPLICATIONS

__all__ = ["ConfigError", "BootstrapSettings", "BacktestSettings", "RunConfig", "load_config"]


class ConfigError(InvalidInput):
    """The configuration file is malformed."""


@dataclass(frozen=True)
class BootstrapSettings:
    enabled: bool = False
    replications: int = DEFAULT_REPLICATIONS
    alpha: float = DEFAULT_ALPHA
    seed: Optional[int] = None
    focus: str = "beta"


@dataclass(frozen=True)
class BacktestSettings:
    start_date: str
    end_date: str
    horizons: int = 15
    modes: tuple = ("regional", "provincial")
    variables: tuple = ("I", "R", "D", "T")


@dataclass(frozen=True)
class RunConfig:
    inputs: dict
    output: Path
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    backtest: Optional[BacktestSettings] = None
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)
    repair: RepairPolicy = RepairPolicy.CLAMP_MONOTONE
    workers: Optional[int] = None
    source: Optional[Path] = None

    def with_overrides(self, out=None, workers=None, seed=None) -> "RunConfig":
        cfg = self
        if out is not None:
            cfg = replace(cfg, output=Path(out))
        if workers is not None:
            cfg = replace(cfg, workers=int(workers))
        if seed is not None:
            cfg = replace(cfg, bootstrap=replace(cfg.bootstrap, seed=int(seed)))
        return cfg

    def check_inputs(self):
        """Raise ``FileNotFoundError`` for the first missing input file."""
        for name, path in self.inputs.items():
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"input {name}: {path} does not exist")

    def check_bootstrap(self, required=False):
        if (self.bootstrap.enabled or required) and self.bootstrap.seed is None:
            raise ConfigError("bootstrap requires a seed (bootstrap.seed or --seed)")


def _section(raw, name):
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def _unknown(section, allowed, name):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")


def load_config(path) -> RunConfig:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _unknown(raw, ("inputs", "output", "repair", "workers", "forecast", "backtest",
                   "bootstrap"), "config")
    base = path.parent
    inputs = _section(raw, "inputs")
    _unknown(inputs, ("province_cases", "region_full", "province_deaths"), "inputs")
    for key in ("province_cases", "region_full"):
        if key not in inputs:
            raise ConfigError(f"inputs.{key} is required")
    inputs = {k: (base / v if v is not None else None) for k, v in inputs.items()}

    fc = _section(raw, "forecast")
    _unknown(fc, ("horizon", "max_horizon", "mode", "window", "lag_range", "penalty_grid",
                  "cv_folds"), "forecast")
    try:
        search = HyperparameterSearchSpace(tuple(fc.get("lag_range", (1, 7))),
                                           tuple(fc.get("penalty_grid", DEFAULT_PENALTY_GRID)),
                                           fc.get("cv_folds", 5))
        forecast = ForecastConfig(fc.get("horizon", 7), search,
                                  AggregationMode(fc.get("mode", "regional")),
                                  fc.get("window"), fc.get("max_horizon", 15))
    except ValueError as exc:
        raise ConfigError(f"forecast: {exc}") from None

    backtest = None
    if raw.get("backtest"):
        bt = _section(raw, "backtest")
        _unknown(bt, ("start_date", "end_date", "horizons", "modes", "variables"), "backtest")
        if "start_date" not in bt or "end_date" not in bt:
            raise ConfigError("backtest needs start_date and end_date")
        backtest = BacktestSettings(str(bt["start_date"]), str(bt["end_date"]),
                                    int(bt.get("horizons", 15)),
                                    tuple(bt.get("modes", ("regional", "provincial"))),
                                    tuple(bt.get("variables", ("I", "R", "D", "T"))))

    bs = _section(raw, "bootstrap")
    _unknown(bs, ("enabled", "replications", "alpha", "seed", "focus"), "bootstrap")
    bootstrap = BootstrapSettings(bool(bs.get("enabled", False)),
                                  int(bs.get("replications", DEFAULT_REPLICATIONS)),
                                  float(bs.get("alpha", DEFAULT_ALPHA)),
                                  None if bs.get("seed") is None else int(bs["seed"]),
                                  str(bs.get("focus", "beta")))
    try:
        repair = RepairPolicy(raw.get("repair", "clamp_monotone"))
    except ValueError:
        raise ConfigError(f"unknown repair policy {raw.get('repair')!r}") from None
    output = Path(raw.get("output", "runs/default"))
    workers = raw.get("workers")
    return RunConfig(inputs, output, forecast, backtest, bootstrap, repair,
                     None if workers is None else int(workers), path)
