import filecmp
import json

import numpy as np
import pandas as pd
import pytest
import yaml

from provsird.cli import main
from provsird.synthetic import make_world


def write_config(directory, world, **sections):
    world.write_csv(directory / "data")
    raw = {
        "inputs": {"province_cases": "data/province_cases.csv",
                   "region_full": "data/region_full.csv",
                   "province_deaths": "data/province_deaths.csv"},
        "output": str(directory / "out"),
        "workers": 1,
        "forecast": {"horizon": 7, "lag_range": [1, 3], "cv_folds": 3,
                     "penalty_grid": [0.0001, 0.01, 1.0]},
    }
    raw.update(sections)
    path = directory / "run.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def small_world():
    return make_world(1, n_provinces=4, n_regions=2)


def test_ingest_clean_and_recount(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    assert main(["ingest", "--config", str(cfg)]) == 0
    anomalies = pd.read_csv(tmp_path / "out" / "anomalies.csv")
    assert len(anomalies) == 0
    assert (tmp_path / "out" / "dataset" / "units.csv").is_file()

    cases = tmp_path / "data" / "province_cases.csv"
    frame = pd.read_csv(cases)
    rows = frame.index[frame.unit_id == "P02"]
    k = rows[30]
    frame.loc[k, "total_cases"] = frame.loc[rows[29], "total_cases"] - 2
    frame.to_csv(cases, index=False)
    assert main(["ingest", "--config", str(cfg)]) == 0
    anomalies = pd.read_csv(tmp_path / "out" / "anomalies.csv")
    assert len(anomalies) == 1
    assert anomalies.loc[0, "unit_id"] == "P02" and anomalies.loc[0, "kind"] == "repair"
    assert not any(p.name.startswith(".staging") for p in (tmp_path / "out").iterdir())


def test_missing_input(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    (tmp_path / "data" / "region_full.csv").unlink()
    assert main(["ingest", "--config", str(cfg)]) == 3


def test_bad_config(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world, forecast={"horizon": 99})
    assert main(["forecast", "--config", str(cfg)]) == 2
    cfg.write_text("inputs: [1, 2", encoding="utf-8")
    assert main(["ingest", "--config", str(cfg)]) == 2


def test_forecast(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    code = main(["forecast", "--config", str(cfg), "--unit", "P01", "--as-of", "2020-04-01",
                 "--horizon", "7"])
    assert code == 0
    frame = pd.read_csv(tmp_path / "out" / "forecast.csv")
    assert len(frame) == 7 and list(frame.horizon) == list(range(1, 8))
    n = small_world.units["P01"].population
    total = frame[["S", "I", "R", "D"]].sum(axis=1)
    assert np.all(np.abs(total - n) <= 1e-9 * n)
    for col in ("R", "D"):
        assert np.all(np.diff(frame[col]) >= 0)
    assert np.all(np.diff(frame["S"]) <= 0)
    meta = json.loads((tmp_path / "out" / "forecast.json").read_text())
    assert meta["P01"]["as_of"] == "2020-04-01"


def test_unknown_unit(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    assert main(["forecast", "--config", str(cfg), "--unit", "nowhere"]) == 2


def test_insufficient_data(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    code = main(["forecast", "--config", str(cfg), "--unit", "P00", "--as-of", "2020-02-26"])
    assert code == 4
    skipped = pd.read_csv(tmp_path / "out" / "skipped.csv")
    assert list(skipped.unit_id) == ["P00"]


def test_bootstrap_reproducible(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world, bootstrap={"replications": 120})
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["bootstrap", "--config", str(cfg), "--out", str(out), "--seed", "5",
                     "--unit", "P03", "--as-of", "2020-04-05", "--horizon", "5"])
        assert code == 0
        outs.append(out)
    for name in ("forecast.csv", "forecast.json"):
        assert filecmp.cmp(outs[0] / name, outs[1] / name, shallow=False)
    frame = pd.read_csv(outs[0] / "forecast.csv")
    for name in ("I", "beta"):
        lo, hi = frame[f"{name}_lower"], frame[f"{name}_upper"]
        assert np.all(lo <= frame[name] + 1e-9) and np.all(frame[name] <= hi + 1e-9)


def test_bootstrap_needs_seed(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    assert main(["bootstrap", "--config", str(cfg), "--unit", "P03"]) == 2


def test_backtest(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world,
                       backtest={"start_date": "2020-04-01", "end_date": "2020-04-02",
                                 "horizons": 3})
    assert main(["backtest", "--config", str(cfg)]) == 0
    for mode in ("regional", "provincial"):
        d = tmp_path / "out" / "backtest" / mode
        ledger = pd.read_csv(d / "ledger.csv")
        assert len(ledger) == 2 * 4 * 3 * 4
        for name in ("mape_by_horizon.csv", "mpe_distribution.csv", "clusters.json",
                     "max_horizon.txt"):
            assert (d / name).is_file()


def test_backtest_needs_section(tmp_path, small_world):
    cfg = write_config(tmp_path, small_world)
    assert main(["backtest", "--config", str(cfg)]) == 2
