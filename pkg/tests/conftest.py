import numpy as np
import pytest

from condiff.killed_sim import SimConfig, conditional_flow, simulate_killed, uniform_grid
from condiff.model import ConstantPolicy
from condiff.scenarios import driftless_interval


@pytest.fixture(scope="session")
def driftless_run():
    """One moderately sized driftless ensemble shared across modules."""
    model = driftless_interval(horizon=1.0)
    config = SimConfig(20_000, 1e-3, 7, uniform_grid(1.0, 0.05))
    policy = ConstantPolicy((0.0,), model.control_set)
    ens = simulate_killed(model, policy, None, config)
    return model, policy, config, ens


@pytest.fixture(scope="session")
def driftless_flow(driftless_run):
    _, _, _, ens = driftless_run
    return conditional_flow(ens)


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)
