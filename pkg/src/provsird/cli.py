"""Command-line entry point.

Subcommands ``ingest``, ``forecast``, ``backtest`` and ``bootstrap`` read a
YAML run configuration (see :mod:`provsird.config`); ``--out``,
``--workers`` and ``--seed`` override the corresponding keys.

Exit codes: 0 success, 2 schema/config/unknown-unit errors, 3 I/O failure,
4 insufficient data (a skip report is written).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
import tempfile
import zlib
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ConfigError, RunConfig, load_config
from .data_model import Level, as_dates
from .evaluation import BacktestSpec, run_backtest, write_reports
from .exceptions import InsufficientData, ProvsirdError
from .forecast import forecast_province, write_forecast
from .ingest import assemble, load_dataset, read_series, write_anomalies, write_series
from .uncertainty import forecast_bands

logger = logging.getLogger("provsird")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INSUFFICIENT = 4


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a temporary directory whose entries replace ``out_dir``'s on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield stage
        for entry in sorted(stage.iterdir()):
            dest = out_dir / entry.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            os.replace(entry, dest)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _ingest(cfg: RunConfig):
    dataset = load_dataset(cfg.inputs["province_cases"], cfg.inputs["region_full"],
                           cfg.inputs.get("province_deaths"))
    return dataset, assemble(dataset, cfg.repair)


def _load(cfg: RunConfig):
    """Units and series from a previous ``ingest`` run, or ingest now."""
    ingested = cfg.output / "dataset"
    if (ingested / "units.csv").is_file():
        return read_series(ingested)
    dataset, assembly = _ingest(cfg)
    return dataset.units, assembly.series


def cmd_ingest(cfg: RunConfig, args) -> int:
    dataset, assembly = _ingest(cfg)
    with staged_output(cfg.output) as stage:
        write_series(assembly.series, stage / "dataset", dataset.units)
        write_anomalies(assembly.anomalies, stage / "anomalies.csv")
    print(f"ingested {len(assembly.series)} units, {len(assembly.anomalies)} anomalies, "
          f"{len(assembly.unusable)} unusable")
    return EXIT_OK


def _unit_seed(seed, unit_id):
    return np.random.SeedSequence([int(seed), zlib.crc32(unit_id.encode("utf-8"))])


def _forecast(cfg: RunConfig, args, with_bands: bool) -> int:
    if with_bands:
        cfg.check_bootstrap(required=True)
    units, series = _load(cfg)
    unit_ids = args.unit or sorted(u for u, g in units.items()
                                   if g.level is Level.PROVINCE and u in series)
    unknown = [u for u in unit_ids if u not in units]
    if unknown:
        raise CommandError(f"unknown unit(s): {', '.join(unknown)}", EXIT_USAGE)
    horizon = args.horizon or cfg.forecast.horizon
    as_of = as_dates(args.as_of) if args.as_of else None
    results, bands, skipped, cache = [], {}, [], {}
    for uid in unit_ids:
        day = as_of if as_of is not None else (series[uid].dates[-1] if uid in series else None)
        try:
            if day is None:
                raise InsufficientData(f"{uid}: no usable series")
            result, models = forecast_province(uid, units, series, cfg.forecast, day,
                                               horizon, cache)
            if with_bands:
                bs = cfg.bootstrap
                bands[uid] = forecast_bands(result, models, series[uid].until(day),
                                            bs.replications, bs.alpha,
                                            _unit_seed(bs.seed, uid), bs.focus)
        except InsufficientData as exc:
            skipped.append({"unit_id": uid, "as_of": "" if day is None else str(day),
                            "reason": str(exc)})
            continue
        results.append(result)
    with staged_output(cfg.output) as stage:
        write_forecast(results, stage / "forecast.csv", stage / "forecast.json", bands)
        if skipped:
            pd.DataFrame(skipped).to_csv(stage / "skipped.csv", index=False,
                                         lineterminator="\n")
    for s in skipped:
        print(f"skipped {s['unit_id']}: {s['reason']}", file=sys.stderr)
    print(f"forecast {len(results)} unit(s), horizon {horizon}")
    return EXIT_INSUFFICIENT if skipped else EXIT_OK


def cmd_forecast(cfg, args):
    return _forecast(cfg, args, cfg.bootstrap.enabled)


def cmd_bootstrap(cfg, args):
    return _forecast(cfg, args, True)


def cmd_backtest(cfg: RunConfig, args) -> int:
    if cfg.backtest is None:
        raise CommandError("config has no backtest section", EXIT_USAGE)
    units, series = _load(cfg)
    bt = cfg.backtest
    summary = []
    with staged_output(cfg.output) as stage:
        for mode in bt.modes:
            spec = BacktestSpec(bt.start_date, bt.end_date, bt.horizons, mode, bt.variables)
            result = run_backtest(spec, units, series, cfg.forecast, cfg.workers)
            horizon = write_reports(result, stage / "backtest" / spec.training_mode.value)
            summary.append(f"max_horizon[{spec.training_mode.value}]={horizon} "
                           f"rows={len(result.ledger)} skipped={len(result.skipped)}")
    for line in summary:
        print(line)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "bootstrap": cmd_bootstrap,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--workers", type=int, help="parallel workers (default: all CPUs)")
    common.add_argument("--seed", type=int, help="bootstrap seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="provsird", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="assemble series from CSV snapshots")
    for name, text in (("forecast", "forecast provinces"),
                       ("bootstrap", "forecast provinces with bootstrap bands")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--unit", action="append", help="province id (repeatable; default all)")
        p.add_argument("--as-of", help="forecast origin date (default: last observed day)")
        p.add_argument("--horizon", type=int, help="days ahead (default from config)")
    sub.add_parser("backtest", parents=[common], help="rolling-origin backtest and reports")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.out, args.workers, args.seed)
        cfg.check_inputs()
        return COMMANDS[args.command](cfg, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InsufficientData as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (ConfigError, ProvsirdError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
