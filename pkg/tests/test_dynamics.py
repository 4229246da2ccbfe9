import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from edge_market.models.market import MarketInstance, SolverMethod
from edge_market.models.options import CesOptions, PropBrOptions, PropDynOptions
from edge_market.models.scenario import GenerationConfig
from edge_market.services.dynamics import (
    best_response,
    ces_demand,
    ces_dual_decomposition,
    initial_bids,
    propbr_run,
    propdyn_run,
    propdyn_step,
    write_trace_csv,
)
from edge_market.services.eg_core import solve_eg
from edge_market.services.scenario_gen import build_instance, generate
from edge_market.utils.exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateAllocationError,
    StalledEnError,
    StepSizeError,
)
from edge_market.utils.io import read_csv


def sharing_value(a, bids, others):
    """Utility of a bidder in the proportional-sharing game"""
    a, bids, others = (np.asarray(v, dtype=float) for v in (a, bids, others))
    return float(np.sum(a * bids / (bids + others)))


def test_initial_bids_spend_budgets(six_example):
    """Uniform and seeded initial bids both spend every budget"""
    assert initial_bids(six_example).sum(axis=1) == pytest.approx([1.0, 4.0])
    seeded = initial_bids(six_example, seed=4)
    assert seeded.sum(axis=1) == pytest.approx([1.0, 4.0])
    assert (seeded > 0).all()


def test_propdyn_step_fixed_point(six_example):
    """Equilibrium bids are returned unchanged"""
    bids = np.array([[0.0, 1.0, 0.0], [1.0, 1.0, 2.0]])

    assert propdyn_step(six_example, bids) == pytest.approx(bids, abs=1e-12)


def test_propdyn_step_conserves_budgets(six_example):
    """Row sums of the new bids equal the budgets"""
    bids = initial_bids(six_example, seed=1)
    for _ in range(5):
        bids = propdyn_step(six_example, bids)
        assert bids.sum(axis=1) == pytest.approx([1.0, 4.0], rel=1e-12)
        assert bids.sum() == pytest.approx(six_example.total_budget, rel=1e-12)


def test_propdyn_step_errors(six_example):
    """A column without bids or a service without utility stops the update"""
    with pytest.raises(StalledEnError):
        propdyn_step(six_example, [[1.0, 0.0, 0.0], [4.0, 0.0, 0.0]])
    instance = MarketInstance(budgets=[1.0, 1.0], valuations=[[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DegenerateAllocationError):
        propdyn_step(instance, [[0.0, 1.0], [0.5, 0.5]])


def test_propdyn_run_six_example(six_example):
    """Proportional response reaches prices (1, 2, 2) and utilities (5, 16)"""
    solution, trace = propdyn_run(six_example)

    assert solution.prices == pytest.approx([1.0, 2.0, 2.0], abs=1e-4)
    assert solution.utilities == pytest.approx([5.0, 16.0], abs=1e-3)
    assert solution.method == SolverMethod.PROPDYN
    assert len(trace) == solution.iterations
    assert sum(trace.prices[-1]) == pytest.approx(5.0)


def test_propdyn_run_base_case_is_fast(base_case):
    """The base case settles within a few hundred iterations at tol 1e-4"""
    solution, _ = propdyn_run(base_case, PropDynOptions(tol=1e-4))

    assert solution.converged
    assert solution.iterations < 500


def test_propdyn_single_service():
    """One service settles after the first response"""
    instance = MarketInstance(budgets=[2.0], valuations=[[1.0, 3.0]])

    solution, _ = propdyn_run(instance)

    assert solution.iterations <= 2
    assert_allclose(solution.x, [[1.0, 1.0]])


def test_propdyn_iteration_cap(six_example):
    """Hitting the cap reports the last iterate and the trace"""
    with pytest.raises(ConvergenceError) as excinfo:
        propdyn_run(six_example, PropDynOptions(max_iters=3))

    assert excinfo.value.solution is not None
    assert excinfo.value.solution.converged is False
    assert len(excinfo.value.trace) == 3
    assert "price_change" in excinfo.value.residuals


def test_write_trace_csv(six_example, tmp_path):
    """The trace CSV has one row per iteration"""
    solution, trace = propdyn_run(six_example, PropDynOptions(tol=1e-3))

    path = write_trace_csv(trace, tmp_path / "trace.csv")
    rows = read_csv(path)

    assert len(rows) == len(trace)
    assert list(rows[0].keys()) == ["iteration", "p_1", "p_2", "p_3", "residual"]


def test_ces_demand_single_en():
    """With one EN the whole budget is spent on it"""
    instance = MarketInstance(budgets=[3.0], valuations=[[2.0]])

    assert ces_demand(instance, [1.5], 0, 0.5) == pytest.approx([2.0])


def test_ces_demand_symmetric():
    """Identical ENs at identical prices get equal shares"""
    instance = MarketInstance(budgets=[1.0], valuations=[[2.0, 2.0]])

    assert ces_demand(instance, [1.0, 1.0], 0, 0.7) == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize("rho", [0.3, 0.9, 0.99])
def test_ces_demand_spends_budget(six_example, rho):
    """Demand costs exactly the budget"""
    prices = np.array([1.0, 2.0, 2.0])

    demand = ces_demand(six_example, prices, 1, rho)

    assert float(prices @ demand) == pytest.approx(4.0, rel=1e-10)


def test_ces_demand_first_order_conditions(six_example):
    """Marginal CES utility per unit of money is equal over all ENs"""
    rho = 0.6
    prices = np.array([1.3, 2.1, 1.7])
    a = six_example.valuation_matrix[1]
    x = ces_demand(six_example, prices, 1, rho)

    def log_utility(bundle):
        return np.log(np.sum((a * bundle) ** rho)) / rho

    marginals = []
    for j in range(3):
        step = np.zeros(3)
        step[j] = 1e-5
        marginals.append((log_utility(x + step) - log_utility(x - step)) / (2e-5) / prices[j])
    assert marginals == pytest.approx([marginals[0]] * 3, rel=1e-4)


def test_ces_demand_rejects_rho(six_example):
    """The CES exponent must lie strictly between zero and one"""
    with pytest.raises(ConfigError):
        ces_demand(six_example, [1.0, 2.0, 2.0], 0, 1.0)


def test_ces_dual_decomposition_six_example(six_example):
    """CES prices with rho=0.99 approximate the linear equilibrium"""
    solution, trace = ces_dual_decomposition(six_example, CesOptions(rho=0.99, step=0.001, p0=0.2))

    assert solution.converged
    assert solution.prices == pytest.approx([1.0, 2.0, 2.0], abs=1e-2)
    assert solution.utilities == pytest.approx([5.0, 16.0], rel=1e-2)
    assert len(trace) == solution.iterations


def test_ces_dual_decomposition_base_case(base_case):
    """Linear utilities of the CES equilibrium at rho=0.99 are within 1% of the linear equilibrium"""
    reference = solve_eg(base_case)

    solution, _ = ces_dual_decomposition(base_case, CesOptions(rho=0.99, step=0.001, p0=0.2))

    assert solution.converged
    assert_allclose(solution.u, reference.u, rtol=1e-2)
    assert_allclose(solution.p.sum(), base_case.total_budget, rtol=1e-2)


def test_ces_dual_decomposition_symmetric():
    """A symmetric market has equal prices"""
    instance = MarketInstance(budgets=[1.0, 1.0], valuations=[[1.0, 2.0], [2.0, 1.0]])

    solution, _ = ces_dual_decomposition(instance, CesOptions(rho=0.9, step=0.01, p0=0.5))

    assert solution.prices[0] == pytest.approx(solution.prices[1], rel=1e-6)
    assert solution.prices[0] == pytest.approx(1.0, rel=1e-4)


def test_ces_dual_decomposition_diverges(six_example):
    """An oversized step is reported instead of iterating forever"""
    with pytest.raises(StepSizeError):
        ces_dual_decomposition(six_example, CesOptions(step=1e6, p0=0.2))


def test_best_response_single_en():
    """On one EN the whole budget is bid"""
    instance = MarketInstance(budgets=[2.0, 1.0], valuations=[[5.0], [1.0]])

    assert best_response(instance, 0, [3.0], 2.0) == pytest.approx([2.0])


def test_best_response_two_ens():
    """Bids of a=(4, 1) against (1, 1) with budget one go to the first EN"""
    instance = MarketInstance(budgets=[1.0, 1.0], valuations=[[4.0, 1.0], [1.0, 1.0]])

    bids = best_response(instance, 0, [1.0, 1.0], 1.0)

    assert bids == pytest.approx([1.0, 0.0])


def test_best_response_small_budget():
    """Bids vanish with the budget"""
    instance = MarketInstance(budgets=[1.0, 1.0], valuations=[[4.0, 1.0], [1.0, 1.0]])

    assert best_response(instance, 0, [1.0, 1.0], 1e-12).sum() < 1e-11


@pytest.mark.parametrize("seed", range(5))
def test_best_response_matches_grid_search(seed):
    """No split of the budget on a grid does better than the best response"""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 2.0, size=3)
    others = rng.uniform(0.2, 2.0, size=3)
    budget = float(rng.uniform(0.1, 2.0))
    instance = MarketInstance(budgets=[budget, 1.0], valuations=[a.tolist(), [1.0, 1.0, 1.0]])

    bids = best_response(instance, 0, others, budget)

    assert bids.sum() == pytest.approx(budget)
    grid = np.linspace(0.0, 1.0, 101)
    best_grid = max(
        sharing_value(a, budget * np.array([f, g, 1.0 - f - g]), others)
        for f, g in itertools.product(grid, grid)
        if f + g <= 1.0 + 1e-12
    )
    assert sharing_value(a, bids, others) >= best_grid - 1e-9


def test_propbr_single_en():
    """Two buyers on one EN bid their whole budgets"""
    instance = MarketInstance(budgets=[1.0, 3.0], valuations=[[2.0], [5.0]])

    solution, trace = propbr_run(instance)

    assert solution.converged
    assert solution.prices == pytest.approx([4.0])
    assert_allclose(solution.x, [[0.25], [0.75]])
    assert_allclose(trace.bids[0], [[1.0], [3.0]])


def test_propbr_clears_market(six_example):
    """Proportional sharing always allocates every EN that receives bids"""
    try:
        solution, _ = propbr_run(six_example, PropBrOptions(max_rounds=200))
    except ConvergenceError as exc:
        solution = exc.solution

    assert solution.x.sum(axis=0) == pytest.approx(np.ones(3))
    assert solution.x.sum() == pytest.approx(3.0)


def test_propbr_median_utility_below_proportional_dynamics():
    """The median buyer does no better under best responses than under proportional response"""
    scenario = generate(GenerationConfig(n_ens=20, n_services=10), seed=3)
    instance, _ = build_instance(scenario)
    reference, _ = propdyn_run(instance)

    try:
        solution, _ = propbr_run(instance, PropBrOptions(max_rounds=300))
    except ConvergenceError as exc:
        solution = exc.solution

    ratios = solution.u / reference.u
    assert np.median(ratios) <= 1.0 + 1e-6
