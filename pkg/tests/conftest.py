import numpy as np
import pytest

from provsird.data_model import GeoUnit, Level, SirdState, generate_synthetic
from provsird.ingest import assemble
from provsird.synthetic import make_world


def random_trajectory(rng, length=None, n=None):
    """Synthetic series with time-varying rates that keep every compartment positive."""
    length = int(length or rng.integers(20, 101))
    n = int(n or rng.integers(10_000, 5_000_000))
    steps = length - 1
    t = np.arange(steps)
    beta = np.clip(rng.uniform(0.1, 0.4) + 0.05 * np.sin(t / rng.uniform(3, 9)), 0, None)
    gr = rng.uniform(0.02, 0.08) * (1 + 0.3 * np.cos(t / 5))
    gd = rng.uniform(0.001, 0.02) * (1 + 0.2 * np.sin(t / 7))
    i0 = float(rng.integers(10, 500))
    init = SirdState(n - i0, i0, 0.0, 0.0, n)
    unit = GeoUnit("X", level=Level.REGION, population=n)
    return generate_synthetic(n, init, beta, gr, gd, unit=unit), (beta, gr, gd)


@pytest.fixture(scope="session")
def world():
    return make_world(0)


@pytest.fixture(scope="session")
def assembled(world):
    return assemble(world.dataset())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class RolloutAudit:
    """Checks every trajectory produced by forecasts and bound rollouts."""

    def __init__(self, rollout):
        self.rollout = rollout
        self.trajectories = 0
        self.states = 0

    def __call__(self, state, beta, gamma_r, gamma_d):
        from provsird.forecast import trajectory_violations

        states = self.rollout(state, beta, gamma_r, gamma_d)
        problems = trajectory_violations(states, state)
        assert not problems, f"trajectory violates conservation/monotonicity: {problems}"
        self.trajectories += 1
        self.states += len(states)
        return states


@pytest.fixture(scope="session", autouse=True)
def rollout_audit():
    import provsird.forecast
    import provsird.sird
    import provsird.uncertainty

    audit = RolloutAudit(provsird.sird.rollout)
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(provsird.forecast, "rollout", audit)
        mp.setattr(provsird.uncertainty, "rollout", audit)
        yield audit
