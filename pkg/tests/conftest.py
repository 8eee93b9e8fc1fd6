import numpy as np
import pytest

from distvolt.scenario import Scenario
from distvolt.solver import default_params, initial_state, solve_sync

DATA = "data"


@pytest.fixture(scope="session")
def eightbus_scenario():
    from pathlib import Path
    root = Path(__file__).resolve().parent.parent
    return Scenario.from_file(root / "data" / "eightbus.yaml")


@pytest.fixture(scope="session")
def eightbus(eightbus_scenario):
    model, region = eightbus_scenario.build_model()
    cost = eightbus_scenario.build_cost(model.n)
    return model, region, cost


@pytest.fixture(scope="session")
def eightbus_params(eightbus):
    model, region, cost = eightbus
    return default_params(model, cost, chi=0)


@pytest.fixture(scope="session")
def eightbus_solution(eightbus, eightbus_params):
    """Deep reference solve shared across tests."""
    model, region, cost = eightbus
    state0 = initial_state(model, region)
    result = solve_sync(state0, eightbus_params, model, region, cost,
                        tol=1e-14, max_iter=40_000, record=False)
    assert result.converged
    return result


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
