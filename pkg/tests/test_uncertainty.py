import numpy as np
import pytest

from provsird.data_model import GeoUnit, Level, SirdState, generate_synthetic
from provsird.exceptions import AlignmentError, InsufficientData, InvalidInput
from provsird.forecast import ForecastConfig, forecast_province
from provsird.regression import LagRegressionModel, fit, predict_path
from provsird.sird import rollout
from provsird.uncertainty import (IntervalBand, bootstrap_parameter_band, bootstrap_paths,
                                  bound_trajectories, forecast_bands, r0_band, variable_bands)

H = np.arange(1, 6)
N = 1_000_000
PROVINCE = GeoUnit("P", level=Level.PROVINCE, parent_id="R", population=N)


def band(lo, hi, name="", level=0.9):
    lo = np.broadcast_to(np.asarray(lo, dtype=float), H.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), H.shape)
    return IntervalBand(H, lo, hi, level, name)


def noisy_ar1(seed, length=60, c0=0.02, c1=0.8, sd=0.01):
    r = np.random.default_rng(seed)
    y = [c0 / (1 - c1)]
    for _ in range(length - 1):
        y.append(c0 + c1 * y[-1] + r.normal(0, sd))
    return np.array(y)


def local_series(steps=25):
    return generate_synthetic(N, SirdState(N - 800, 800, 0, 0, N), np.linspace(0.3, 0.2, steps),
                              [0.05] * steps, [0.01] * steps, unit=PROVINCE)


class TestParameterBand:
    def test_zero_residuals(self):
        y = [0.3]
        for _ in range(30):
            y.append(0.05 + 0.7 * y[-1])
        m = fit(y, 1, 0.0)
        assert np.max(np.abs(m.residuals)) < 1e-12
        b = bootstrap_parameter_band(m, y, 5, replications=200, seed=1)
        point = predict_path(m, y, 5)
        np.testing.assert_allclose(b.lower, point, atol=1e-10)
        np.testing.assert_allclose(b.upper, point, atol=1e-10)

    def test_lower_non_negative(self):
        for seed in range(5):
            y = np.abs(noisy_ar1(seed, c0=0.0005, c1=0.9, sd=0.02))
            m = fit(y, 2, 0.01)
            b = bootstrap_parameter_band(m, y, 10, replications=200, seed=seed)
            assert np.all(b.lower >= 0) and np.all(b.upper >= b.lower)

    def test_reproducible(self):
        y = noisy_ar1(3)
        m = fit(y, 2, 0.1)
        a = bootstrap_parameter_band(m, y, 7, replications=150, seed=42)
        b = bootstrap_parameter_band(m, y, 7, replications=150, seed=42)
        np.testing.assert_array_equal(a.lower, b.lower)
        np.testing.assert_array_equal(a.upper, b.upper)
        c = bootstrap_parameter_band(m, y, 7, replications=150, seed=43)
        assert not np.array_equal(a.upper, c.upper)

    def test_nested_in_alpha(self):
        y = noisy_ar1(4)
        m = fit(y, 1, 0.0)
        b90 = bootstrap_parameter_band(m, y, 6, replications=300, alpha=0.10, seed=9)
        b95 = bootstrap_parameter_band(m, y, 6, replications=300, alpha=0.05, seed=9)
        assert np.all(b95.lower <= b90.lower) and np.all(b95.upper >= b90.upper)
        assert b90.level == pytest.approx(0.9)

    def test_paths_shape(self):
        y = noisy_ar1(5)
        paths = bootstrap_paths(fit(y, 3, 0.0), y, 4, replications=120, seed=0)
        assert paths.shape == (120, 4) and np.all(paths >= 0)

    def test_errors(self):
        y = noisy_ar1(6)
        m = fit(y, 1, 0.0)
        with pytest.raises(InvalidInput):
            bootstrap_parameter_band(m, y, 3, replications=50, seed=0)
        with pytest.raises(InvalidInput):
            bootstrap_parameter_band(m, y, 3, alpha=1.5, seed=0)
        few = LagRegressionModel(np.array([0.1, 0.5]), 1, 0.0, np.zeros(2), training=y[:3])
        with pytest.raises(InsufficientData):
            bootstrap_parameter_band(few, y, 3, seed=0)


class TestR0Band:
    def test_substitution(self):
        out = r0_band(band(0.2, 0.4), band(0.05, 0.1), band(0.05, 0.1))
        np.testing.assert_allclose(out.lower, 1.0, rtol=1e-12)
        np.testing.assert_allclose(out.upper, 4.0, rtol=1e-12)

    def test_undefined_upper(self):
        out = r0_band(band(0.0, 0.4), band(0.0, 0.1), band(0.0, 0.1))
        assert np.all(np.isnan(out.upper))
        np.testing.assert_allclose(out.lower, 0.0)

    def test_degenerate(self):
        out = r0_band(band(0.3, 0.3), band(0.1, 0.1), band(0.05, 0.05))
        np.testing.assert_allclose(out.lower, 2.0)
        np.testing.assert_allclose(out.upper, 2.0)

    def test_misaligned(self):
        other = IntervalBand(np.arange(1, 4), [0.1] * 3, [0.2] * 3, 0.9)
        with pytest.raises(AlignmentError):
            r0_band(band(0.1, 0.2), other, band(0.1, 0.2))


class TestVariableBands:
    point = {"beta": np.full(5, 0.25), "gamma_r": np.full(5, 0.05), "gamma_d": np.full(5, 0.01)}

    def rate_bands(self, beta=(0.25, 0.25), gr=(0.05, 0.05), gd=(0.01, 0.01)):
        return {"beta": band(*beta, "beta"), "gamma_r": band(*gr, "gamma_r"),
                "gamma_d": band(*gd, "gamma_d")}

    def test_degenerate_focus(self):
        local = local_series()
        traj = bound_trajectories(local, self.rate_bands(), "beta", self.point)
        for k in ("lower", "upper"):
            assert [s.as_array().tolist() for s in traj[k]] == \
                [s.as_array().tolist() for s in traj["point"]]
        vb = variable_bands(local, self.rate_bands(), "beta", self.point)
        np.testing.assert_array_equal(vb["I"].lower, vb["I"].upper)

    def test_beta_orders_infected(self):
        local = local_series()
        traj = bound_trajectories(local, self.rate_bands(beta=(0.1, 0.4)), "beta", self.point)
        lo = np.array([s.i for s in traj["lower"]])
        hi = np.array([s.i for s in traj["upper"]])
        assert np.all(hi >= lo)

    def test_s_lower_is_beta_upper_rollout(self):
        local = local_series()
        vb = variable_bands(local, self.rate_bands(beta=(0.0, 0.35)), "beta", self.point)
        states = rollout(local.last_state(), [0.35] * 5, [0.05] * 5, [0.01] * 5)
        np.testing.assert_array_equal(vb["S"].lower, [s.s for s in states])

    def test_contains_point(self):
        local = local_series()
        bands = self.rate_bands(beta=(0.1, 0.4), gr=(0.02, 0.09), gd=(0.0, 0.03))
        for focus in ("beta", "gamma_r", "gamma_d"):
            vb = variable_bands(local, bands, focus, self.point)
            traj = bound_trajectories(local, bands, focus, self.point)
            for name in ("S", "I", "R", "D"):
                p = np.array([getattr(s, name.lower()) for s in traj["point"]])
                assert np.all(vb[name].contains(p))

    def test_unknown_focus(self):
        with pytest.raises(InvalidInput):
            variable_bands(local_series(), self.rate_bands(), "delta", self.point)


def test_forecast_bands_end_to_end(world, assembled):
    cfg = ForecastConfig(horizon=7)
    result, models = forecast_province("P05", world.units, assembled.series, cfg, "2020-04-02")
    local = assembled.series["P05"].until("2020-04-02")
    bands = forecast_bands(result, models, local, replications=200, seed=7)
    assert set(bands) == {"beta", "gamma_r", "gamma_d", "r0", "S", "I", "R", "D"}
    for name in ("beta", "gamma_r", "gamma_d"):
        assert np.all(bands[name].lower >= 0)
        assert len(bands[name].lower) == 7
    for name in ("S", "I", "R", "D"):
        assert np.all(bands[name].contains(result.compartment(name)))
    again = forecast_bands(result, models, local, replications=200, seed=7)
    for name in bands:
        np.testing.assert_array_equal(bands[name].upper, again[name].upper)
