import numpy as np
import pytest

from provsird.data_model import (AnomalyKind, CompartmentSeries, GeoUnit, Level,
                                  ParameterSeries, SirdState, generate_synthetic,
                                  validate_series)
from provsird.exceptions import InvalidInput, StructuralError

from conftest import random_trajectory

N = 1000
UNIT = GeoUnit("U", level=Level.REGION, population=N)


def hand_steps(S, I, R, D, beta, gr, gd, steps):
    out = [(S, I, R, D)]
    for _ in range(steps):
        inf = beta * S * I / N
        S, I, R, D = S - inf, I + inf - (gr + gd) * I, R + gr * I, D + gd * I
        out.append((S, I, R, D))
    return np.array(out)


class TestGeoUnit:
    def test_population_must_be_positive(self):
        with pytest.raises(InvalidInput):
            GeoUnit("A", level=Level.REGION, population=0)

    def test_province_requires_parent(self):
        with pytest.raises(InvalidInput):
            GeoUnit("A", level=Level.PROVINCE, population=10)
        assert GeoUnit("A", parent_id="R", population=10).parent_id == "R"

    def test_name_defaults_to_id(self):
        assert GeoUnit("A", level="region", population=5).name == "A"


class TestSirdState:
    def test_conservation_enforced(self):
        with pytest.raises(InvalidInput):
            SirdState(900, 10, 0, 0, 1000)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInput):
            SirdState(1001, -1, 0, 0, 1000)

    def test_total_cases(self):
        assert SirdState(900, 50, 40, 10, 1000).total_cases == 100


class TestGenerateSynthetic:
    def test_zero_rates_constant(self):
        s = generate_synthetic(N, SirdState(990, 10, 0, 0, N), [0] * 5, [0] * 5, [0] * 5)
        assert len(s) == 6
        np.testing.assert_array_equal(s.compartments(), np.tile([990, 10, 0, 0], (6, 1)))

    def test_hand_stepped_ten_steps(self):
        s = generate_synthetic(N, SirdState(990, 10, 0, 0, N), [0.3] * 10, [0.1] * 10,
                               [0.05] * 10)
        assert s.I[1] == pytest.approx(11.47, abs=1e-12)
        assert s.S[1] == pytest.approx(987.03, abs=1e-12)
        expected = hand_steps(990.0, 10.0, 0.0, 0.0, 0.3, 0.1, 0.05, 10)
        np.testing.assert_allclose(s.compartments(), expected, rtol=1e-13)

    def test_recovery_only(self):
        s = generate_synthetic(N, SirdState(990, 10, 0, 0, N), [0] * 4, [0.2] * 4, [0] * 4)
        assert np.all(s.S == 990) and np.all(s.D == 0)
        assert np.all(np.diff(s.I) < 0)
        np.testing.assert_allclose(np.diff(s.R), 0.2 * s.I[:-1])

    def test_rejects_negative_rate(self):
        with pytest.raises(InvalidInput):
            generate_synthetic(N, SirdState(990, 10, 0, 0, N), [-0.1], [0], [0])

    def test_rejects_mismatched_population(self):
        with pytest.raises(InvalidInput):
            generate_synthetic(500, SirdState(990, 10, 0, 0, N), [0.1], [0], [0])

    def test_properties_random(self, rng):
        for _ in range(20):
            s, _ = random_trajectory(rng)
            assert validate_series(s) == []
            assert np.all(np.diff(s.R) >= 0) and np.all(np.diff(s.D) >= 0)
            assert np.all(np.diff(s.S) <= 0)


class TestValidateSeries:
    def series(self, **override):
        s = generate_synthetic(N, SirdState(990, 10, 0, 0, N), [0.3] * 5, [0.1] * 5,
                               [0.05] * 5, unit=UNIT)
        fields = dict(S=s.S.copy(), I=s.I.copy(), R=s.R.copy(), D=s.D.copy(),
                      total_cases=s.total_cases.copy(), dates=s.dates)
        fields.update(override)
        return CompartmentSeries(UNIT, fields["dates"], fields["S"], fields["I"],
                                 fields["R"], fields["D"], fields["total_cases"])

    def test_clean(self):
        assert validate_series(self.series()) == []

    def test_decreasing_total(self):
        base = self.series()
        T = base.total_cases.copy()
        T[3] = T[2] - 0.5
        S = N - T
        I = T - base.R - base.D
        found = validate_series(self.series(total_cases=T, S=S, I=I))
        assert [a.kind for a in found] == [AnomalyKind.NEGATIVE_INCREMENT]

    def test_conservation_violation(self):
        base = self.series()
        S = base.S.copy()
        S[2] += 0.01 * N
        found = validate_series(self.series(S=S))
        assert [a.kind for a in found] == [AnomalyKind.CONSERVATION_VIOLATION]

    def test_date_gap(self):
        base = self.series()
        dates = base.dates.copy()
        dates[4:] += 1
        found = validate_series(self.series(dates=dates))
        assert [a.kind for a in found] == [AnomalyKind.DATE_GAP]

    def test_length_mismatch_is_structural(self):
        base = self.series()
        with pytest.raises(StructuralError):
            validate_series(self.series(S=base.S[:-1]))

    def test_does_not_mutate(self):
        s = self.series()
        before = s.compartments().copy()
        validate_series(s)
        np.testing.assert_array_equal(s.compartments(), before)
        with pytest.raises(ValueError):
            s.S[0] = 1.0


class TestCompartmentSeries:
    def test_until_and_on(self):
        s = generate_synthetic(N, SirdState(990, 10, 0, 0, N), [0.3] * 5, [0.1] * 5,
                               [0.05] * 5, start="2020-03-01")
        assert len(s.until("2020-03-03")) == 3
        sub = s.on(["2020-03-02", "2020-03-04"])
        np.testing.assert_array_equal(sub.S, s.S[[1, 3]])
        with pytest.raises(StructuralError):
            s.on(["2020-04-01"])

    def test_parameter_series_length_check(self):
        with pytest.raises(StructuralError):
            ParameterSeries(np.array(["2020-01-01"], dtype="datetime64[D]"), [0.1, 0.2],
                            [0.1], [0.1], [True])
