import numpy as np
import pytest
from numpy.testing import assert_allclose

from edge_market.models.scenario import EcScenario, GenerationConfig
from edge_market.services.scenario_gen import build_instance, effective_rate, effective_rates, generate
from edge_market.utils.exceptions import ConfigError, EmptyMarketError


@pytest.fixture
def config():
    """Base-case generator settings"""
    return GenerationConfig(n_ens=8, n_services=4)


@pytest.fixture
def small_scenario():
    """Two services and two ENs; service 2 reaches no EN in time"""
    return EcScenario(
        area_km=10.0,
        en_positions=[(0.0, 0.0), (1.0, 0.0)],
        service_positions=[(0.0, 1.0), (9.0, 9.0)],
        mu=[[100.0, 120.0], [90.0, 110.0]],
        t_max=[20.0, 5.0],
        net_delay=[[1.0, 2.0], [12.0, 11.0]],
        r=[2e-5, 3e-5],
        raw_capacity=[10.0, 15.0],
        seed=None,
    )


def test_effective_rate():
    """The rate drops to zero once the delay budget is used up"""
    assert effective_rate(100.0, 20.0, 10.0) == pytest.approx(99.9)
    assert effective_rate(100.0, 20.0, 20.0) == 0.0
    assert effective_rate(100.0, 20.0, 25.0) == 0.0
    assert effective_rate(0.05, 20.0, 0.0) == 0.0


def test_effective_rates_matches_scalar(small_scenario):
    """The vectorized rates agree with the scalar formula"""
    rates = effective_rates(small_scenario)

    for i in range(2):
        for j in range(2):
            expected = effective_rate(
                small_scenario.mu[i][j], small_scenario.t_max[i], small_scenario.net_delay[i][j]
            )
            assert rates[i, j] == pytest.approx(expected)


def test_build_instance_valuations(small_scenario):
    """a_ij = r_i q_ij c_j for kept services; unreachable services are dropped"""
    instance, warnings = build_instance(small_scenario, label="small")

    assert instance.shape == (1, 2)
    assert len(warnings) == 1
    assert "service 1" in warnings[0]
    assert instance.provenance["dropped_services"] == [1]
    q = effective_rate(100.0, 20.0, 1.0)
    assert instance.valuations[0][0] == pytest.approx(2e-5 * q * 10.0)
    assert instance.raw_capacities == [10.0, 15.0]


def test_build_instance_rejects_empty_market(small_scenario):
    """A scenario where nobody reaches any EN cannot become a market"""
    data = small_scenario.model_dump()
    data["t_max"] = [0.5, 0.5]
    scenario = EcScenario.model_validate(data)

    with pytest.raises(EmptyMarketError):
        build_instance(scenario)


def test_build_instance_budget_count(small_scenario):
    """One budget per scenario service is required"""
    with pytest.raises(ConfigError):
        build_instance(small_scenario, budgets=[1.0, 1.0, 1.0])


def test_generate_base_case(config):
    """The base case yields a finite, non-negative 4 x 8 market"""
    scenario = generate(config, seed=7)
    instance, warnings = build_instance(scenario)

    assert warnings == []
    assert instance.shape == (4, 8)
    a = instance.valuation_matrix
    assert np.isfinite(a).all()
    assert (a >= 0).all()
    assert scenario.rng == "PCG64"
    assert scenario.seed == 7


def test_generate_is_reproducible(config):
    """The same seed reproduces the same scenario"""
    assert generate(config, seed=11) == generate(config, seed=11)
    assert generate(config, seed=11) != generate(config, seed=12)


def test_generate_shares_leading_services(config):
    """Growing N keeps the services of the smaller market"""
    small = generate(config, seed=5)
    large = generate(GenerationConfig(n_ens=8, n_services=6), seed=5)

    assert large.service_positions[:4] == small.service_positions
    assert large.en_positions == small.en_positions
    assert large.t_max[:4] == small.t_max


def test_generate_validates_plain_settings():
    """Plain dictionaries are validated into a GenerationConfig"""
    with pytest.raises(ConfigError):
        generate({"n_ens": 0, "n_services": 4}, seed=1)


def test_base_case_is_built_from_its_scenario(base_scenario, base_case):
    """The shipped base case is exactly the market of the shipped scenario"""
    instance, warnings = build_instance(base_scenario, label=base_case.label)

    assert warnings == []
    assert_allclose(instance.valuation_matrix, base_case.valuation_matrix, rtol=1e-12)
    assert instance.budgets == base_case.budgets
    assert instance.raw_capacities == base_case.raw_capacities
    assert (instance.valuation_matrix > 0).all()
    assert base_case.provenance["rng"] == base_scenario.rng
