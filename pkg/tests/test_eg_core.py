import numpy as np
import pytest
from numpy.testing import assert_allclose

from edge_market.models.market import EquilibriumSolution, MarketInstance, SolverMethod
from edge_market.models.options import EgEngine, EgOptions
from edge_market.services.baselines_audit import proportional_allocation
from edge_market.services.eg_core import (
    certificate_passes,
    dual_value,
    implied_eta,
    kkt_certificate,
    polish,
    primal_value,
    recover_prices,
    solve_eg,
)
from edge_market.utils.exceptions import ConvergenceError, DegenerateAllocationError, FeasibilityError


@pytest.fixture
def equilibrium(six_example, six_equilibrium):
    """Exact equilibrium of the six example as a solution"""
    allocation, prices = six_equilibrium
    return EquilibriumSolution.from_arrays(six_example, np.asarray(allocation), np.asarray(prices))


def test_solve_eg_six_example(six_example):
    """The equilibrium of the six example has prices (1, 2, 2)"""
    solution = solve_eg(six_example)

    assert solution.prices == pytest.approx([1.0, 2.0, 2.0], abs=1e-5)
    assert solution.utilities == pytest.approx([5.0, 16.0], abs=1e-4)
    assert_allclose(solution.x, [[0.0, 0.5, 0.0], [1.0, 0.5, 1.0]], atol=1e-5)
    assert solution.surpluses == [0.0, 0.0]
    assert solution.method == SolverMethod.EG


def test_solve_eg_passes_certificate(base_case):
    """Solutions clear the market, exhaust budgets and pass the certificate"""
    solution = solve_eg(base_case)
    report = kkt_certificate(base_case, solution)

    assert certificate_passes(report, 1e-6)
    assert solution.x.sum(axis=0) == pytest.approx(np.ones(8))
    assert float(np.sum(solution.prices)) == pytest.approx(base_case.total_budget, rel=1e-6)


def test_solve_eg_symmetric_split():
    """Identical services with equal budgets split every EN in half"""
    instance = MarketInstance(budgets=[1.0, 1.0], valuations=[[1.0, 3.0, 2.0], [1.0, 3.0, 2.0]])

    solution = solve_eg(instance)

    assert_allclose(solution.x, np.full((2, 3), 0.5), atol=1e-9)


def test_solve_eg_row_scaling(six_example):
    """Scaling one valuation row scales its utility and leaves prices alone"""
    base = solve_eg(six_example)
    scaled_rows = [[3.0 * a for a in six_example.valuations[0]], six_example.valuations[1]]
    scaled = solve_eg(MarketInstance(budgets=six_example.budgets, valuations=scaled_rows))

    assert scaled.prices == pytest.approx(base.prices, abs=1e-4)
    assert scaled.utilities[0] == pytest.approx(3.0 * base.utilities[0], rel=1e-4)


def test_solve_eg_budget_split(six_example):
    """Splitting a budget over two identical services leaves the aggregate allocation unchanged"""
    split = MarketInstance(
        budgets=[1.0, 2.0, 2.0],
        valuations=[six_example.valuations[0], six_example.valuations[1], six_example.valuations[1]],
    )

    base = solve_eg(six_example)
    solution = solve_eg(split)

    assert solution.prices == pytest.approx(base.prices, abs=1e-4)
    assert solution.x[1] + solution.x[2] == pytest.approx(base.x[1], abs=1e-4)


def test_solve_eg_normalized_budgets(six_example):
    """Normalizing budgets scales prices and keeps utilities"""
    solution = solve_eg(six_example, EgOptions(normalize_budgets=True))

    assert solution.prices == pytest.approx([0.2, 0.4, 0.4], abs=1e-5)
    assert solution.utilities == pytest.approx([5.0, 16.0], abs=1e-4)


def test_solve_eg_projected_gradient(six_example):
    """The gradient engine agrees with proportional response"""
    solution = solve_eg(six_example, EgOptions(engine=EgEngine.PROJECTED_GRADIENT))

    assert solution.prices == pytest.approx([1.0, 2.0, 2.0], abs=1e-3)
    assert solution.method == SolverMethod.EG_PROJECTED_GRADIENT


def test_solve_eg_iteration_cap(base_case):
    """Stopping early hands back a polished iterate"""
    with pytest.raises(ConvergenceError) as excinfo:
        solve_eg(base_case, EgOptions(max_iters=2))

    solution = excinfo.value.solution
    assert solution.converged is False
    assert solution.x.sum(axis=0) == pytest.approx(np.ones(8))


def test_kkt_certificate_at_equilibrium(six_example, equilibrium):
    """The exact equilibrium has zero residuals and zero duality gap"""
    report = kkt_certificate(six_example, equilibrium)

    assert report.max_kkt_residual == pytest.approx(0.0, abs=1e-12)
    assert report.clearing_slack == pytest.approx(0.0, abs=1e-12)
    assert report.budget_slack == pytest.approx(0.0, abs=1e-12)
    assert report.mbb_violation == pytest.approx(0.0, abs=1e-12)
    assert report.duality_gap == pytest.approx(0.0, abs=1e-9)
    assert certificate_passes(report, 1e-9)


def test_kkt_certificate_perturbed_prices(six_example, six_equilibrium):
    """Raising every price by 0.01 breaks budget exhaustion"""
    allocation, prices = six_equilibrium
    perturbed = EquilibriumSolution.from_arrays(
        six_example, np.asarray(allocation), np.asarray(prices) + 0.01
    )

    report = kkt_certificate(six_example, perturbed)

    assert report.budget_slack == pytest.approx(0.025)
    assert report.budget_slack >= 0.01 * 0.5
    assert not certificate_passes(report, 1e-6)


def test_primal_value(six_example, six_equilibrium):
    """The objective is sum B_i ln u_i, and -inf for a starved service"""
    allocation, _ = six_equilibrium

    assert primal_value(six_example, allocation) == pytest.approx(np.log(5.0) + 4 * np.log(16.0))
    assert primal_value(six_example, [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]) == -np.inf


def test_dual_value_matches_primal_at_equilibrium(six_example, six_equilibrium):
    """Strong duality holds at the equilibrium"""
    allocation, prices = six_equilibrium
    p = np.asarray(prices)

    eta = implied_eta(six_example, p)

    assert eta == pytest.approx([0.2, 0.25])
    assert dual_value(six_example, p, eta) == pytest.approx(primal_value(six_example, allocation))


def test_dual_value_bounds_primal(six_example):
    """Any feasible dual point bounds any feasible allocation from above"""
    prices = np.array([1.0, 1.0, 1.0])
    eta = implied_eta(six_example, prices)

    assert dual_value(six_example, prices, eta) >= primal_value(six_example, proportional_allocation(six_example))


def test_dual_value_rejects_infeasible_eta(six_example):
    """Violated pairs are listed in the error"""
    with pytest.raises(FeasibilityError) as excinfo:
        dual_value(six_example, [1.0, 2.0, 2.0], [1.0, 1.0])

    assert (0, 1) in excinfo.value.violations


def test_recover_prices(six_example, six_equilibrium):
    """Prices follow from the utilities of an equilibrium allocation"""
    allocation, prices = six_equilibrium

    assert recover_prices(six_example, allocation) == pytest.approx(prices)
    with pytest.raises(DegenerateAllocationError):
        recover_prices(six_example, [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


def test_solve_eg_projected_gradient_single_service():
    """A lone service gets every EN whole from the gradient engine"""
    instance = MarketInstance(budgets=[1.0], valuations=[[3.0, 5.0]])

    solution = solve_eg(instance, EgOptions(engine=EgEngine.PROJECTED_GRADIENT))

    assert_allclose(solution.x, [[1.0, 1.0]])
    assert_allclose(solution.p, [3.0 / 8.0, 5.0 / 8.0], rtol=1e-9)
    assert np.isfinite(solution.p).all()


def test_polish_splits_empty_columns(six_example):
    """An EN nobody holds is shared by the services valuing it"""
    solution = polish(six_example, [[0.0, 0.5, 0.0], [0.0, 0.5, 1.0]], 3, False, SolverMethod.EG)

    assert_allclose(solution.x[:, 0], [0.5, 0.5])
    assert_allclose(solution.x.sum(axis=0), np.ones(3))
    assert np.isfinite(solution.p).all()
    assert solution.iterations == 3


def test_solve_eg_random_markets(random_markets):
    """Every random market passes the certificate, duality gap included"""
    for k, instance in enumerate(random_markets):
        solution = solve_eg(instance)

        assert certificate_passes(kkt_certificate(instance, solution), 1e-6), k


def test_solve_eg_matches_grid_search():
    """On 2 x 2 markets no allocation on a 1e-3 grid beats the equilibrium"""
    rng = np.random.default_rng(77)
    grid = np.linspace(0.0, 1.0, 1001)
    g1, g2 = np.meshgrid(grid, grid, indexing="ij")
    for k in range(50):
        b = rng.uniform(0.5, 2.0, size=2)
        a = rng.uniform(0.1, 1.0, size=(2, 2))
        instance = MarketInstance(budgets=b.tolist(), valuations=a.tolist())

        value = primal_value(instance, solve_eg(instance).x)
        with np.errstate(divide="ignore"):
            objective = b[0] * np.log(a[0, 0] * g1 + a[0, 1] * g2) + b[1] * np.log(
                a[1, 0] * (1 - g1) + a[1, 1] * (1 - g2)
            )
        best = float(objective.max())

        assert value >= best - 1e-9, k
        assert value - best <= 1e-4, k


def test_solve_eg_utilities_do_not_depend_on_start(base_case):
    """Random initial bids lead to the same utilities"""
    reference = solve_eg(base_case).u

    for seed in range(5):
        assert_allclose(solve_eg(base_case, EgOptions(seed=seed)).u, reference, rtol=1e-6)
