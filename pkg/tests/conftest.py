import numpy as np
import pytest

from flowplan.flowfield import GyreParams, NoiseParams, Point2, gyre_field
from flowplan.mdp import StateSpace, build_model, classic_policy_iteration


@pytest.fixture(scope="session")
def gyre_benchmark():
    """The 20x20, A=0.5, sigma=1 configuration used throughout the paper-style
    checks, solved once per session."""
    field = gyre_field(GyreParams(0.5, 20.0), NoiseParams.isotropic(1.0))
    states = StateSpace.regular(20, 20, 2.0, (17, 17))
    model = build_model(field, states, dt_h=1.0, v_max=3.0, gamma=0.95)
    exact = classic_policy_iteration(model)
    return model, exact


@pytest.fixture
def zero_field_model():
    """Small 5x5 zero-current model with mild noise."""
    field = gyre_field(GyreParams(0.0, 20.0), NoiseParams.isotropic(1.0), extent=(10.0, 10.0))
    states = StateSpace.regular(5, 5, 2.0, (2, 2))
    return build_model(field, states, dt_h=1.0, v_max=3.0, gamma=0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
