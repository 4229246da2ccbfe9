import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linprog

from edge_market.models.market import Allocation, EquilibriumSolution, MarketInstance, check_allocation
from edge_market.models.options import EgOptions, MaxminOptions
from edge_market.models.reports import FairnessReport
from edge_market.services.eg_core import kkt_certificate, solve_eg
from edge_market.utils.exceptions import ConfigError, ConvergenceError
from edge_market.utils.io import worker_count

logger = logging.getLogger(__name__)

PARETO_CERTIFICATE_TOL = 1e-6
PARETO_FIELDS = ("max_kkt_residual", "clearing_slack", "mbb_violation")


def proportional_allocation(instance: MarketInstance) -> Allocation:
    """Every EN split in proportion to the budgets"""
    shares = instance.budget_vector / instance.total_budget
    return np.repeat(shares[:, np.newaxis], instance.n_ens, axis=1)


def welfare_max(instance: MarketInstance, weights) -> Allocation:
    """
    Maximize sum_i w_i u_i(x_i)

    Each EN goes to argmax_i w_i a_ij; ties are split equally.

    Args:
        instance: Market instance
        weights: Non-negative weights, not all zero

    Returns:
        The welfare-maximizing allocation
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (instance.n_services,):
        raise ConfigError(f"expected {instance.n_services} weights")
    if (w < 0).any() or not (w > 0).any():
        raise ConfigError("weights must be non-negative and not all zero")
    scores = w[:, np.newaxis] * instance.valuation_matrix
    winners = np.isclose(scores, scores.max(axis=0, keepdims=True), rtol=1e-12, atol=0.0)
    return winners / winners.sum(axis=0, keepdims=True)


def maxmin_allocation(instance: MarketInstance, opts: Optional[MaxminOptions] = None) -> Allocation:
    """
    Maximize min_i u_i(x_i) with two linear programs

    The first finds the optimal minimum utility t*. The second keeps every
    u_i >= t* (1 - opts.tol) and picks the allocation closest in L1 norm to
    the budget-proportional split, which makes the answer unique.

    This replaces bisection on the target utility with a projected
    subgradient feasibility check: t* comes out at the LP solver's accuracy
    rather than at a bisection tolerance of 1e-5, and no step size has to be
    tuned.

    Raises:
        ConvergenceError: When the LP solver fails
    """
    opts = opts or MaxminOptions()
    n, m = instance.shape
    a = instance.valuation_matrix
    size = n * m

    # x is flattened row-major: x[i, j] -> i * m + j
    utility_rows = np.zeros((n, size))
    for i in range(n):
        utility_rows[i, i * m : (i + 1) * m] = a[i]
    capacity_rows = np.tile(np.eye(m), n)

    # stage one: maximize t subject to t <= u_i
    cost = np.zeros(size + 1)
    cost[-1] = -1.0
    a_ub = np.vstack(
        [
            np.hstack([-utility_rows, np.ones((n, 1))]),
            np.hstack([capacity_rows, np.zeros((m, 1))]),
        ]
    )
    b_ub = np.concatenate([np.zeros(n), np.ones(m)])
    stage_one = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(0, None)] * (size + 1), method="highs")
    if stage_one.status != 0:
        raise ConvergenceError(f"maxmin LP failed: {stage_one.message}")
    target = float(stage_one.x[-1]) * (1.0 - opts.tol)

    # stage two: minimize sum |x - x_hat| with variables (x, d)
    x_hat = proportional_allocation(instance).ravel()
    identity = np.eye(size)
    cost = np.concatenate([np.zeros(size), np.ones(size)])
    a_ub = np.vstack(
        [
            np.hstack([-utility_rows, np.zeros((n, size))]),
            np.hstack([capacity_rows, np.zeros((m, size))]),
            np.hstack([identity, -identity]),
            np.hstack([-identity, -identity]),
        ]
    )
    b_ub = np.concatenate([-np.full(n, target), np.ones(m), x_hat, -x_hat])
    stage_two = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(0, None)] * (2 * size), method="highs")
    if stage_two.status != 0:
        raise ConvergenceError(f"maxmin LP failed: {stage_two.message}")
    x = np.clip(stage_two.x[:size].reshape(n, m), 0.0, None)
    logger.debug(f"maxmin target utility {target:.6g}")
    return x


def supporting_prices(instance: MarketInstance, allocation: Allocation) -> NDArray[np.float64]:
    """p_j = max B_i a_ij / u_i over services with positive utility; zero when none"""
    x = check_allocation(instance, allocation, require_feasible=False)
    u = (instance.valuation_matrix * x).sum(axis=1)
    served = u > 0
    if not served.any():
        return np.zeros(instance.n_ens)
    gamma = instance.budget_vector[served] / u[served]
    return (instance.valuation_matrix[served] * gamma[:, np.newaxis]).max(axis=0)


def envy_freeness_index(instance: MarketInstance, allocation: Allocation) -> float:
    """
    min over pairs (i, k) of (u_i(x_i)/B_i) / (u_i(x_k)/B_k), capped at one

    Pairs where bundle k is worth nothing to service i are skipped.
    """
    x = check_allocation(instance, allocation, require_feasible=False)
    cross = instance.valuation_matrix @ x.T  # cross[i, k] = u_i(x_k)
    b = instance.budget_vector
    own = np.diag(cross) / b
    envied = cross / b[np.newaxis, :]
    valued = envied > 0
    if not valued.any():
        return 1.0
    ratios = own[:, np.newaxis] / np.where(valued, envied, 1.0)
    return float(min(1.0, ratios[valued].min()))


def pareto_grid_check(instance: MarketInstance, allocation: Allocation, step: float = 1e-3) -> bool:
    """
    Brute-force Pareto check of a 2 x 2 allocation

    Returns True when no clearing allocation on a grid of the given step makes
    both services weakly better off with a strictly larger total.
    """
    if instance.shape != (2, 2):
        raise ConfigError("pareto_grid_check only handles 2 x 2 instances")
    x = check_allocation(instance, allocation, require_feasible=False)
    a = instance.valuation_matrix
    u = (a * x).sum(axis=1)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    g1, g2 = np.meshgrid(grid, grid, indexing="ij")
    u1 = a[0, 0] * g1 + a[0, 1] * g2
    u2 = a[1, 0] * (1 - g1) + a[1, 1] * (1 - g2)
    scale = max(1.0, float(u.max()))
    dominating = (
        (u1 >= u[0] - 1e-12 * scale)
        & (u2 >= u[1] - 1e-12 * scale)
        & (u1 + u2 > u.sum() + 1e-9 * scale)
    )
    return not bool(dominating.any())


def audit(instance: MarketInstance, solution_or_allocation: Union[EquilibriumSolution, Allocation]) -> FairnessReport:
    """
    Fairness and efficiency audit of an allocation

    Budget slacks use the solution's prices when a solution is given and
    supporting prices otherwise. The Pareto flag comes from the equilibrium
    certificate at supporting prices; 2 x 2 allocations that fail it fall
    back to the grid check.

    Args:
        instance: Market instance
        solution_or_allocation: EquilibriumSolution or N x M allocation

    Returns:
        FairnessReport
    """
    if isinstance(solution_or_allocation, EquilibriumSolution):
        x = check_allocation(instance, solution_or_allocation.x, require_feasible=False)
        prices = solution_or_allocation.p
        surpluses = solution_or_allocation.s
    else:
        x = check_allocation(instance, solution_or_allocation, require_feasible=False)
        prices = supporting_prices(instance, x)
        surpluses = np.zeros(instance.n_services)

    a = instance.valuation_matrix
    b = instance.budget_vector
    u = (a * x).sum(axis=1) + surpluses
    fair_share = (b / instance.total_budget) * a.sum(axis=1)
    proportional_u = (a * proportional_allocation(instance)).sum(axis=1)
    slacks = np.abs((x * prices[np.newaxis, :]).sum(axis=1) + surpluses - b)

    pareto_gap = None
    certified = False
    if (u > 0).all():
        candidate = EquilibriumSolution.from_arrays(instance, x, supporting_prices(instance, x))
        pareto_gap = kkt_certificate(instance, candidate).worst(PARETO_FIELDS)
        certified = pareto_gap <= PARETO_CERTIFICATE_TOL
    if not certified and instance.shape == (2, 2):
        certified = pareto_grid_check(instance, x)

    return FairnessReport(
        ef_index=envy_freeness_index(instance, x),
        proportionality_ratios=(u / fair_share).tolist(),
        sharing_incentive_margins=(u - proportional_u).tolist(),
        budget_exhaustion_slacks=slacks.tolist(),
        pareto_certified=certified,
        pareto_gap=pareto_gap,
        utilities=u.tolist(),
    )


def scheme_allocations(instance: MarketInstance, eg_opts: Optional[EgOptions] = None) -> List[Tuple[str, Any]]:
    """Allocations of the five compared schemes, in display order"""
    return [
        ("ME", solve_eg(instance, eg_opts)),
        ("Prop.", proportional_allocation(instance)),
        ("SW1", welfare_max(instance, np.ones(instance.n_services))),
        ("SW2", welfare_max(instance, instance.budget_vector)),
        ("maxmin", maxmin_allocation(instance)),
    ]


def compare_schemes(instance: MarketInstance, eg_opts: Optional[EgOptions] = None) -> List[Dict[str, Any]]:
    """
    One comparison row per scheme

    Returns:
        Rows with scheme, total_utility, min_utility, ef_index,
        min_prop_ratio and min_si_margin
    """
    schemes = scheme_allocations(instance, eg_opts)
    with ThreadPoolExecutor(max_workers=worker_count(schemes)) as pool:
        reports = list(pool.map(lambda item: audit(instance, item[1]), schemes))

    rows = []
    for (name, _), report in zip(schemes, reports):
        rows.append(
            {
                "scheme": name,
                "total_utility": report.total_utility,
                "min_utility": report.min_utility,
                "ef_index": report.ef_index,
                "min_prop_ratio": report.min_proportionality_ratio,
                "min_si_margin": report.min_sharing_incentive_margin,
            }
        )
    return rows
