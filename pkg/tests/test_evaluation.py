import json

import numpy as np
import pandas as pd
import pytest

from provsird.data_model import GeoUnit, Level, SirdState, generate_synthetic
from provsird.evaluation import (LEDGER_COLUMNS, BacktestSpec, cluster_provinces,
                                 distribution_stats, mape, mape_by_province, mape_table,
                                 max_horizon, max_horizon_from_quartiles, mpe_by_province,
                                 mpe_distribution, quartile_by_horizon, run_backtest,
                                 write_reports)
from provsird.exceptions import (InsufficientData, InsufficientVariation, InvalidInput,
                                 UndefinedMetric)
from provsird.forecast import ForecastConfig
from provsird.regression import HyperparameterSearchSpace

import oracles


def ledger(rows):
    return pd.DataFrame(rows, columns=LEDGER_COLUMNS)


def random_ledger(rng, provinces=6, days=5, horizons=3, zeros=0.05):
    rows = []
    for p in range(provinces):
        for d in range(days):
            for h in range(1, horizons + 1):
                for var in ("I", "R"):
                    actual = 0.0 if rng.random() < zeros else float(rng.uniform(1, 1e4))
                    rows.append((f"P{p}", f"2020-04-{d + 1:02d}", h, var,
                                 float(rng.uniform(0, 2e4)), actual))
    return ledger(rows)


def linear_quantile(values, q):
    v = sorted(values)
    pos = (len(v) - 1) * q
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


class TestMape:
    def test_perfect(self):
        lg = ledger([("P", "d", 1, "I", 50.0, 50.0), ("Q", "d", 1, "I", 7.0, 7.0)])
        assert mape(lg, 1, "I") == 0.0
        assert mpe_by_province(lg, 1, "P", "I") == 0.0

    def test_single_row(self):
        assert mape(ledger([("P", "d", 1, "I", 90.0, 100.0)]), 1, "I") == 10.0

    def test_two_rows(self):
        lg = ledger([("P", "d1", 1, "I", 110.0, 100.0), ("Q", "d1", 1, "I", 45.0, 50.0)])
        assert mape(lg, 1, "I") == pytest.approx(10.0, abs=1e-12)

    def test_zero_actual_excluded(self):
        lg = ledger([("P", "d1", 1, "I", 90.0, 100.0), ("P", "d2", 1, "I", 5.0, 0.0)])
        assert mape(lg, 1, "I") == 10.0
        table = mape_table(lg, ["I"])
        assert table.loc[0, "excluded_rows"] == 1

    def test_no_rows(self):
        with pytest.raises(UndefinedMetric):
            mape(ledger([("P", "d", 1, "I", 1.0, 0.0)]), 1, "I")

    def test_oracle(self, rng):
        lg = random_ledger(rng)
        for h in (1, 2, 3):
            rows = lg[(lg.horizon == h) & (lg.variable == "I")]
            want = oracles.mape_rows(zip(rows.predicted, rows.actual))
            assert mape(lg, h, "I") == pytest.approx(want, abs=1e-12)
            for p in ("P0", "P3"):
                sub = rows[rows.province == p]
                pairs = list(zip(sub.predicted, sub.actual))
                assert mpe_by_province(lg, h, p, "I") == pytest.approx(
                    oracles.mpe_rows(pairs), abs=1e-12)
                assert mape_by_province(lg, h, p, "I") == pytest.approx(
                    oracles.mape_rows(pairs), abs=1e-12)


class TestMpe:
    def test_under_prediction_positive(self):
        lg = ledger([("P", f"d{k}", 1, "I", 0.9 * y, y) for k, y in enumerate([100.0, 250.0])])
        assert mpe_by_province(lg, 1, "P", "I") == 10.0

    def test_cancellation(self):
        lg = ledger([("P", "d1", 1, "I", 110.0, 100.0), ("P", "d2", 1, "I", 90.0, 100.0)])
        assert mpe_by_province(lg, 1, "P", "I") == 0.0

    def test_scaled_identity(self, rng):
        for k in (0.5, 0.9, 1.25):
            actual = rng.uniform(1, 1e5, 30)
            lg = ledger([("P", f"d{i}", 1, "I", k * a, a) for i, a in enumerate(actual)])
            assert mpe_by_province(lg, 1, "P", "I") == pytest.approx(100 * (1 - k), abs=1e-12)


class TestDistributionStats:
    def test_symmetric(self):
        st = distribution_stats([-1.0, 0.0, 1.0])
        assert st.mean == 0.0 and st.skewness == 0.0 and st.sd == 1.0

    def test_oracle(self, rng):
        for _ in range(10):
            x = list(rng.gamma(2.0, 3.0, int(rng.integers(3, 60))))
            got = distribution_stats(x)
            want = oracles.moments(x)
            for a, b in zip(got, want):
                assert a == pytest.approx(b, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(InsufficientVariation):
            distribution_stats([2.0, 2.0, 2.0])
        with pytest.raises(InsufficientData):
            distribution_stats([1.0, 2.0])


class TestClusters:
    def test_boundaries(self):
        c = cluster_provinces({"a": 5, "b": 10, "c": 15, "d": 20, "e": 25})
        assert (c.low, c.mid, c.high) == (["a", "b"], ["c", "d"], ["e"])

    def test_all_low_and_empty(self):
        c = cluster_provinces({"a": 1, "b": 2})
        assert c.mid == [] and c.high == []
        e = cluster_provinces({})
        assert (e.low, e.mid, e.high) == ([], [], [])

    def test_partition_and_stats(self, rng):
        values = {f"P{k}": float(v) for k, v in enumerate(rng.uniform(0, 40, 30))}
        c = cluster_provinces(values)
        assert sorted(c.low + c.mid + c.high) == sorted(values)
        assert not (set(c.low) & set(c.mid) or set(c.mid) & set(c.high))
        st = c.stats["mid"]
        want = oracles.moments([values[p] for p in c.mid])
        assert st.mean == pytest.approx(want[0], abs=1e-12)
        assert c.as_dict()["mid"]["count"] == len(c.mid)


def quartile_ledger(errors_by_horizon):
    """One day, one row per province and horizon with the given absolute % errors."""
    rows = []
    for h, errors in enumerate(errors_by_horizon, start=1):
        for p, e in enumerate(errors):
            rows.append((f"P{p}", "d", h, "I", 100.0 - e, 100.0))
    return ledger(rows)


class TestMaxHorizon:
    def test_rule(self):
        assert max_horizon_from_quartiles([5, 8, 15, 25, 10]) == 3
        assert max_horizon_from_quartiles([21, 22]) == 0
        assert max_horizon_from_quartiles([1, 2, 3]) == 3

    def test_nine_day_fixture(self):
        errors = [[2.0 * h * f for f in (0.8, 0.9, 1.0, 1.3)] for h in range(1, 16)]
        lg = quartile_ledger(errors)
        q = quartile_by_horizon(lg)
        for h in range(1, 16):
            assert q[h] == pytest.approx(linear_quantile(errors[h - 1], 0.75), abs=1e-9)
        assert q[9] <= 20 < q[10]
        assert max_horizon(lg) == 9

    def test_non_contiguous(self):
        lg = quartile_ledger([[1.0, 2.0]])
        lg.loc[:, "horizon"] = 2
        with pytest.raises(InvalidInput):
            max_horizon(lg)


def flat_world(n_regions=2, per_region=2, days=40, dead_province=False):
    """Provinces with identical per-capita trajectories under constant rates."""
    units, series = {}, {}
    steps = days - 1
    for r in range(n_regions):
        rid = f"R{r}"
        members = []
        for k in range(per_region):
            pid = f"P{r}{k}"
            n = 100_000 * (k + 1 + r)
            unit = GeoUnit(pid, level=Level.PROVINCE, parent_id=rid, population=n)
            if dead_province and r == 0 and k == 0:
                s = generate_synthetic(n, SirdState(n, 0, 0, 0, n), [0.0] * steps,
                                       [0.0] * steps, [0.0] * steps, unit=unit)
            else:
                s = generate_synthetic(n, SirdState(n * 0.999, n * 0.001, 0, 0, n),
                                       [0.22] * steps, [0.05] * steps, [0.01] * steps,
                                       unit=unit)
            units[pid], series[pid] = unit, s
            members.append(s)
        npop = sum(m.n for m in members)
        units[rid] = GeoUnit(rid, level=Level.REGION, population=npop)
        series[rid] = generate_synthetic(
            npop, SirdState(*np.sum([m.compartments()[0] for m in members], axis=0), npop),
            [0.0] * steps, [0.0] * steps, [0.0] * steps, unit=units[rid])
    # regional series are the sums of their provinces
    from provsird.training import aggregate_training_series
    for r in range(n_regions):
        rid = f"R{r}"
        pooled = aggregate_training_series(
            [units[f"P{r}{k}"] for k in range(per_region)], series)
        series[rid] = pooled.with_unit(units[rid])
    return units, series


FAST = ForecastConfig(search=HyperparameterSearchSpace((1, 3), (0.0, 1e-4, 1e-2), 3))


class TestBacktest:
    def test_counting(self):
        units, series = flat_world()
        spec = BacktestSpec("2020-03-20", "2020-03-20", horizons=[1], provinces=["P10"])
        res = run_backtest(spec, units, series, FAST)
        assert len(res.ledger) == 4 and res.skipped == []
        spec = BacktestSpec("2020-03-20", "2020-03-21", horizons=3, provinces=["P10", "P11"],
                            variables=["I", "T"])
        assert len(run_backtest(spec, units, series, FAST).ledger) == 2 * 2 * 3 * 2

    @pytest.mark.parametrize("mode", ["regional", "provincial"])
    def test_exact_process_predicted(self, mode):
        units, series = flat_world()
        spec = BacktestSpec("2020-03-15", "2020-03-18", horizons=[1, 5], training_mode=mode)
        lg = run_backtest(spec, units, series, FAST).ledger
        h1 = lg[lg.horizon == 1]
        rel = np.abs(h1.predicted - h1.actual) / h1.actual
        assert rel.max() < 1e-3
        assert mape(lg, 1, "I") < 0.1

    def test_dead_province_skipped(self):
        units, series = flat_world(dead_province=True)
        spec = BacktestSpec("2020-03-15", "2020-03-15", horizons=[1])
        res = run_backtest(spec, units, series, FAST)
        assert "P00" not in set(res.ledger.province)
        assert [s["province"] for s in res.skipped] == ["P00"]

    def test_workers_do_not_change_output(self):
        units, series = flat_world()
        spec = BacktestSpec("2020-03-15", "2020-03-17", horizons=3)
        a = run_backtest(spec, units, series, FAST, workers=1).ledger
        b = run_backtest(spec, units, series, FAST, workers=2).ledger
        pd.testing.assert_frame_equal(a, b)

    def test_spec_validation(self):
        with pytest.raises(InvalidInput):
            BacktestSpec("2020-03-20", "2020-03-19")
        with pytest.raises(InvalidInput):
            BacktestSpec("2020-03-20", "2020-03-21", variables=["X"])
        assert BacktestSpec("2020-03-20", "2020-03-21", horizons=4).horizons == (1, 2, 3, 4)


def test_reports(tmp_path, rng):
    lg = random_ledger(rng, provinces=8, days=3, horizons=7, zeros=0.0)
    lg = lg[lg.variable == "I"].reset_index(drop=True)

    class Result:
        ledger = lg
        skipped = [{"province": "PX", "as_of": "2020-04-01", "reason": "test"}]

    h = write_reports(Result, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"ledger.csv", "mape_by_horizon.csv", "mpe_distribution.csv",
                     "clusters.json", "skipped.csv", "max_horizon.txt"}
    assert int((tmp_path / "max_horizon.txt").read_text()) == h
    table = pd.read_csv(tmp_path / "mape_by_horizon.csv")
    assert list(table.columns) == ["horizon", "mape_I", "excluded_rows"]
    dist = pd.read_csv(tmp_path / "mpe_distribution.csv")
    assert list(dist.columns) == ["horizon", "variable", "n_provinces", "mean", "sd",
                                  "skewness", "kurtosis"]
    assert len(dist) == 7
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    total = sum(clusters[k]["count"] for k in ("low", "mid", "high"))
    assert total == 8 and clusters["horizon"] == 7
    assert mpe_distribution(lg, ["I"]).shape[0] == 7
