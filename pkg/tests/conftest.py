import numpy as np
import pytest

from edge_market.models.market import MarketInstance
from edge_market.models.scenario import EcScenario
from edge_market.utils.constants import BASE_CASE_FIXTURE, BASE_CASE_SCENARIO_FIXTURE, SIX_EXAMPLE_FIXTURE
from edge_market.utils.io import load_fixture


@pytest.fixture
def six_example():
    """Two services and three ENs with equilibrium prices (1, 2, 2)"""
    return MarketInstance.from_document(load_fixture(SIX_EXAMPLE_FIXTURE))


@pytest.fixture
def base_case():
    """Shipped base case with N=4 services and M=8 ENs"""
    return MarketInstance.from_document(load_fixture(BASE_CASE_FIXTURE))


@pytest.fixture
def base_scenario():
    """Scenario the base case is built from"""
    return EcScenario.model_validate(load_fixture(BASE_CASE_SCENARIO_FIXTURE))


@pytest.fixture
def six_equilibrium():
    """Known equilibrium allocation and prices of the six example"""
    allocation = [[0.0, 0.5, 0.0], [1.0, 0.5, 1.0]]
    prices = [1.0, 2.0, 2.0]
    return allocation, prices


@pytest.fixture(scope="session")
def random_markets():
    """200 seeded markets with up to 10 services and 10 ENs, valuations in [0.1, 1)"""
    rng = np.random.default_rng(20240601)
    markets = []
    for _ in range(200):
        n, m = rng.integers(1, 11, size=2)
        markets.append(
            MarketInstance(
                budgets=rng.uniform(0.5, 2.0, size=n).tolist(),
                valuations=rng.uniform(0.1, 1.0, size=(n, m)).tolist(),
            )
        )
    return markets
