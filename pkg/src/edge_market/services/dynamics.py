"""
Iterative equilibrium dynamics: proportional response, CES dual decomposition
and round-robin best response in the proportional-sharing game.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from edge_market.models.market import EquilibriumSolution, MarketInstance, SolverMethod, check_prices
from edge_market.models.options import CesOptions, PropBrOptions, PropDynOptions, StepSchedule
from edge_market.models.reports import DynamicsTrace
from edge_market.utils.constants import BR_BID_FLOOR, DIVERGENCE_FACTOR, PRICE_FLOOR, TOL_FEAS
from edge_market.utils.exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateAllocationError,
    DimensionError,
    InvalidPriceError,
    StalledEnError,
    StepSizeError,
)
from edge_market.utils.io import write_csv

logger = logging.getLogger(__name__)

# N x M matrix of money bids b_ij
BidMatrix = NDArray[np.float64]


def _check_bids(instance: MarketInstance, bids) -> BidMatrix:
    b = np.asarray(bids, dtype=float)
    if b.shape != instance.shape:
        raise DimensionError(f"bid matrix shape {b.shape} does not match market {instance.shape}")
    return b


def initial_bids(instance: MarketInstance, seed: Optional[int] = None) -> BidMatrix:
    """Uniform bids B_i/M, or random positive rows summing to B_i when seeded"""
    budgets = instance.budget_vector[:, np.newaxis]
    if seed is None:
        return np.repeat(budgets / instance.n_ens, instance.n_ens, axis=1)
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=instance.shape)
    return budgets * weights / weights.sum(axis=1, keepdims=True)


def mbb_gap(instance: MarketInstance, allocation: NDArray[np.float64], prices: NDArray[np.float64]) -> float:
    """
    Distance of an iterate from the bang-per-buck conditions

    With r_ij = a_ij (B_i/u_i) / p_j, returns the larger of max(r_ij - 1, 0)
    over all pairs and |1 - r_ij| over held pairs (x_ij > TOL_FEAS). Zero
    exactly when every service only holds maximum bang-per-buck ENs.
    """
    u = (instance.valuation_matrix * allocation).sum(axis=1)
    if (u <= 0).any():
        return float("inf")
    gamma = instance.budget_vector / u
    ratios = instance.valuation_matrix * gamma[:, np.newaxis] / prices[np.newaxis, :]
    held = allocation > TOL_FEAS
    support_gap = float(np.max(np.abs(1.0 - ratios[held]))) if held.any() else 0.0
    return max(float(ratios.max()) - 1.0, support_gap, 0.0)


def propdyn_step(instance: MarketInstance, bids) -> BidMatrix:
    """
    One proportional response update

    Prices are the column sums of the bids, every service receives capacity in
    proportion to its bid and rebids its budget in proportion to the utility
    each EN delivered.

    Args:
        instance: Market instance
        bids: N x M bid matrix with positive column sums

    Returns:
        The next bid matrix; row sums equal the budgets
    """
    b = _check_bids(instance, bids)
    prices = b.sum(axis=0)
    stalled = np.flatnonzero(prices <= 0)
    if stalled.size:
        raise StalledEnError(f"ENs {stalled.tolist()} receive no bids")
    x = b / prices[np.newaxis, :]
    gains = instance.valuation_matrix * x
    u = gains.sum(axis=1)
    starved = np.flatnonzero(u <= 0)
    if starved.size:
        raise DegenerateAllocationError(f"services {starved.tolist()} receive zero utility")
    return instance.budget_vector[:, np.newaxis] * gains / u[:, np.newaxis]


def propdyn_run(
    instance: MarketInstance, opts: Optional[PropDynOptions] = None
) -> Tuple[EquilibriumSolution, DynamicsTrace]:
    """
    Iterate proportional response until prices settle

    Stops when max_j |p_j(t+1) - p_j(t)| / p_j(t) < opts.tol and, when
    opts.mbb_tol is set, the bang-per-buck gap of the iterate is below it.

    Args:
        instance: Market instance
        opts: Dynamics options

    Returns:
        Solution with x_ij = b_ij/p_j and p_j = sum_i b_ij, and the price trace

    Raises:
        ConvergenceError: When opts.max_iters is reached
    """
    opts = opts or PropDynOptions()
    logger.debug(f"PropDyn on {instance!r}, tol={opts.tol}, damping={opts.damping}")
    trace = DynamicsTrace()
    bids = initial_bids(instance, opts.seed)
    prices = bids.sum(axis=0)

    change = gap = float("inf")
    for iteration in range(1, opts.max_iters + 1):
        response = propdyn_step(instance, bids)
        bids = response if opts.damping == 1.0 else (1 - opts.damping) * bids + opts.damping * response
        new_prices = bids.sum(axis=0)
        change = float(np.max(np.abs(new_prices - prices) / prices))
        prices = new_prices
        trace.record(prices, change, bids if opts.record_bids else None)

        if change < opts.tol:
            if opts.mbb_tol is None:
                break
            gap = mbb_gap(instance, bids / prices, prices)
            if gap < opts.mbb_tol:
                break
    else:
        solution = _bid_solution(instance, bids, opts.max_iters, converged=False)
        logger.warning(f"PropDyn stopped after {opts.max_iters} iterations, price change {change:.3g}")
        raise ConvergenceError(
            f"proportional response did not converge in {opts.max_iters} iterations",
            solution=solution,
            residuals={"price_change": change, "mbb_gap": gap},
            trace=trace,
        )

    logger.info(f"PropDyn converged after {iteration} iterations (price change {change:.3g})")
    return _bid_solution(instance, bids, iteration, converged=True), trace


def _bid_solution(instance: MarketInstance, bids: BidMatrix, iterations: int, converged: bool) -> EquilibriumSolution:
    prices = bids.sum(axis=0)
    return EquilibriumSolution.from_arrays(
        instance,
        bids / prices[np.newaxis, :],
        prices,
        iterations=iterations,
        converged=converged,
        method=SolverMethod.PROPDYN,
    )


def _ces_bundles(instance: MarketInstance, prices: NDArray[np.float64], rho: float) -> NDArray[np.float64]:
    # spending shares are a softmax of rho/(1-rho) * ln(a_ij/p_j); a_ij = 0 gets no money
    a = instance.valuation_matrix
    sigma = rho / (1.0 - rho)
    with np.errstate(divide="ignore"):
        scores = sigma * (np.log(a) - np.log(prices)[np.newaxis, :])
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    shares = weights / weights.sum(axis=1, keepdims=True)
    return instance.budget_vector[:, np.newaxis] * shares / prices[np.newaxis, :]


def ces_demand(instance: MarketInstance, prices, service: int, rho: float) -> NDArray[np.float64]:
    """
    Demand of one service with CES utility (sum_j (a_ij x_ij)^rho)^(1/rho)

    Args:
        instance: Market instance
        prices: Length-M strictly positive prices
        service: Service index i
        rho: CES exponent in (0, 1)

    Returns:
        Length-M bundle that spends exactly B_i
    """
    if not 0 < rho < 1:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    p = check_prices(instance, prices)
    if (p <= 0).any():
        raise InvalidPriceError(f"prices must be positive, got {p.tolist()}")
    if not 0 <= service < instance.n_services:
        raise DimensionError(f"service index {service} out of range for N={instance.n_services}")
    return _ces_bundles(instance, p, rho)[service]


def ces_dual_decomposition(
    instance: MarketInstance, opts: Optional[CesOptions] = None
) -> Tuple[EquilibriumSolution, DynamicsTrace]:
    """
    Price adjustment p_j <- max(p_j + alpha(t) (sum_i x_ij - 1), 0) against CES demand

    Returns linear utilities of the final CES bundles. The loop stops when
    the largest absolute price change falls below opts.tol.

    Raises:
        StepSizeError: When the price norm exceeds 1e3 times the total budget
        ConvergenceError: When opts.max_iters is reached
    """
    opts = opts or CesOptions()
    p = np.broadcast_to(np.asarray(opts.p0, dtype=float), (instance.n_ens,)).copy()
    limit = DIVERGENCE_FACTOR * instance.total_budget
    trace = DynamicsTrace()
    logger.debug(f"CES dual decomposition on {instance!r}, rho={opts.rho}, step={opts.step}")

    change = float("inf")
    for iteration in range(1, opts.max_iters + 1):
        x = _ces_bundles(instance, p, opts.rho)
        step = opts.step if opts.schedule == StepSchedule.CONSTANT else opts.step / np.sqrt(iteration)
        new_p = np.maximum(p + step * (x.sum(axis=0) - 1.0), PRICE_FLOOR)
        change = float(np.max(np.abs(new_p - p)))
        p = new_p
        trace.record(p, change)
        if np.linalg.norm(p) > limit:
            raise StepSizeError(f"prices diverged at iteration {iteration}; reduce the step size {opts.step}")
        if change < opts.tol:
            break
    else:
        solution = _ces_solution(instance, p, opts.rho, opts.max_iters, converged=False)
        logger.warning(f"CES dual decomposition stopped after {opts.max_iters} iterations")
        raise ConvergenceError(
            f"CES dual decomposition did not converge in {opts.max_iters} iterations",
            solution=solution,
            residuals={"price_change": change},
            trace=trace,
        )

    logger.info(f"CES dual decomposition converged after {iteration} iterations")
    return _ces_solution(instance, p, opts.rho, iteration, converged=True), trace


def _ces_solution(instance, prices, rho, iterations, converged) -> EquilibriumSolution:
    return EquilibriumSolution.from_arrays(
        instance,
        _ces_bundles(instance, prices, rho),
        prices,
        iterations=iterations,
        converged=converged,
        method=SolverMethod.CES,
    )


def best_response(instance: MarketInstance, service: int, other_bids, budget: float) -> NDArray[np.float64]:
    """
    Best response bids of one service in the proportional-sharing game

    ENs are sorted by a_ij / b_-ij in decreasing order (ties by index), the
    largest prefix k whose last EN still earns a non-negative bid is kept and
    bids on it are sqrt(a_ij b_-ij) (B + sum b_-) / sum sqrt(a b_-) - b_-ij.
    Opponent bids below 1e-12 are raised to 1e-12.

    Args:
        instance: Market instance
        service: Service index i
        other_bids: Length-M total bids of the other services
        budget: Money the service may spend

    Returns:
        Length-M bid vector summing to the budget
    """
    if not 0 <= service < instance.n_services:
        raise DimensionError(f"service index {service} out of range for N={instance.n_services}")
    others = np.asarray(other_bids, dtype=float)
    if others.shape != (instance.n_ens,):
        raise DimensionError(f"other bids must have length {instance.n_ens}")
    a = instance.valuation_matrix[service]
    others = np.maximum(others, BR_BID_FLOOR)

    valued = np.flatnonzero(a > 0)
    order = valued[np.argsort(-(a[valued] / others[valued]), kind="stable")]
    roots = np.sqrt(a[order] * others[order])
    root_sums = np.cumsum(roots)
    totals = budget + np.cumsum(others[order])
    feasible = roots / root_sums * totals - others[order] >= 0
    k = int(np.flatnonzero(feasible).max()) + 1

    bids = np.zeros(instance.n_ens)
    top = order[:k]
    bids[top] = np.maximum(roots[:k] * totals[k - 1] / root_sums[k - 1] - others[top], 0.0)
    return bids


def propbr_run(
    instance: MarketInstance, opts: Optional[PropBrOptions] = None
) -> Tuple[EquilibriumSolution, DynamicsTrace]:
    """
    Round-robin best responses in ascending service order

    Converges when the largest bid change over a round is below opts.tol. When
    the bids come back to a state seen two or more rounds earlier the run is
    reported as oscillating, with converged set to False.

    Raises:
        ConvergenceError: When opts.max_rounds is reached
    """
    opts = opts or PropBrOptions()
    bids = initial_bids(instance)
    trace = DynamicsTrace()
    history: List[BidMatrix] = [bids.copy()]
    logger.debug(f"PropBR on {instance!r}, tol={opts.tol}")

    change = float("inf")
    for round_index in range(1, opts.max_rounds + 1):
        previous = bids.copy()
        for i in range(instance.n_services):
            others = bids.sum(axis=0) - bids[i]
            bids[i] = best_response(instance, i, others, instance.budget_vector[i])
        change = float(np.max(np.abs(bids - previous)))
        trace.record(bids.sum(axis=0), change, bids)

        if change < opts.tol:
            logger.info(f"PropBR converged after {round_index} rounds")
            return _proportional_sharing_solution(instance, bids, round_index, True), trace
        if any(np.max(np.abs(bids - past)) < opts.tol for past in history[:-1]):
            logger.warning(f"PropBR bids oscillate after {round_index} rounds")
            return _proportional_sharing_solution(instance, bids, round_index, False), trace
        history = (history + [bids.copy()])[-opts.cycle_window:]

    solution = _proportional_sharing_solution(instance, bids, opts.max_rounds, False)
    logger.warning(f"PropBR stopped after {opts.max_rounds} rounds, bid change {change:.3g}")
    raise ConvergenceError(
        f"best response dynamics did not converge in {opts.max_rounds} rounds",
        solution=solution,
        residuals={"bid_change": change},
        trace=trace,
    )


def _proportional_sharing_solution(instance, bids, rounds, converged) -> EquilibriumSolution:
    totals = bids.sum(axis=0)
    safe = np.where(totals > 0, totals, 1.0)
    return EquilibriumSolution.from_arrays(
        instance,
        bids / safe[np.newaxis, :],
        totals,
        iterations=rounds,
        converged=converged,
        method=SolverMethod.PROPBR,
    )


def write_trace_csv(trace: DynamicsTrace, path: Path) -> Path:
    """Write iteration, p_1..p_M and residual columns"""
    n_prices = len(trace.prices[0]) if len(trace) else 0
    fieldnames = ["iteration"] + [f"p_{j + 1}" for j in range(n_prices)] + ["residual"]
    rows = []
    for t, (prices, residual) in enumerate(zip(trace.prices, trace.residuals), start=1):
        row = {"iteration": t, "residual": residual}
        row.update({f"p_{j + 1}": price for j, price in enumerate(prices)})
        rows.append(row)
    return write_csv(rows, path, fieldnames)
