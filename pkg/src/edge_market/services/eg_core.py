import logging
from typing import Iterable, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from edge_market.models.market import (
    Allocation,
    CertificateReport,
    EquilibriumSolution,
    MarketInstance,
    PriceVector,
    SolverMethod,
    check_allocation,
    check_prices,
)
from edge_market.models.options import EgEngine, EgOptions, PropDynOptions
from edge_market.services.dynamics import propdyn_run
from edge_market.services.projected_gradient import LogUtilityAscent
from edge_market.utils.constants import NETPROFIT_OBJECTIVE_RTOL, NETPROFIT_OBJECTIVE_WINDOW, TOL_FEAS, TOL_NUM
from edge_market.utils.exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateAllocationError,
    FeasibilityError,
)

logger = logging.getLogger(__name__)

TINY = np.finfo(float).tiny


def primal_value(instance: MarketInstance, allocation: Allocation, surpluses=None) -> float:
    """Eisenberg-Gale objective sum_i B_i ln u_i; -inf when some u_i is zero"""
    x = check_allocation(instance, allocation, require_feasible=False)
    u = (instance.valuation_matrix * x).sum(axis=1)
    if surpluses is not None:
        u = u + np.asarray(surpluses, dtype=float)
    if (u <= 0).any():
        return -np.inf
    return float(instance.budget_vector @ np.log(u))


def recover_prices(instance: MarketInstance, allocation: Allocation, surpluses=None) -> PriceVector:
    """
    Prices p_j = max_i B_i a_ij / u_i supporting an allocation

    Args:
        instance: Market instance
        allocation: N x M allocation
        surpluses: Unspent money added to the utilities, if any

    Returns:
        Length-M price vector

    Raises:
        DegenerateAllocationError: When some service has zero utility
    """
    x = check_allocation(instance, allocation, require_feasible=False)
    u = (instance.valuation_matrix * x).sum(axis=1)
    if surpluses is not None:
        u = u + np.asarray(surpluses, dtype=float)
    starved = np.flatnonzero(u <= 0)
    if starved.size:
        raise DegenerateAllocationError(f"services {starved.tolist()} have zero utility")
    gamma = instance.budget_vector / u
    return (instance.valuation_matrix * gamma[:, np.newaxis]).max(axis=0)


def implied_eta(instance: MarketInstance, prices: PriceVector, cap: Optional[float] = None) -> NDArray[np.float64]:
    """Largest feasible eta_i = min_j p_j/a_ij over valued ENs, floored at the smallest float"""
    a = instance.valuation_matrix
    with np.errstate(divide="ignore"):
        ratios = np.where(a > 0, prices[np.newaxis, :] / np.where(a > 0, a, 1.0), np.inf)
    eta = ratios.min(axis=1)
    if cap is not None:
        eta = np.minimum(eta, cap)
    return np.maximum(eta, TINY)


def infeasible_pairs(instance: MarketInstance, p: PriceVector, eta: NDArray[np.float64]) -> List[Tuple[int, int]]:
    excess = instance.valuation_matrix * eta[:, np.newaxis] - p[np.newaxis, :]
    bound = TOL_NUM * np.maximum(1.0, np.abs(p))[np.newaxis, :]
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(excess > bound))]


def dual_value(instance: MarketInstance, prices, eta) -> float:
    """
    Dual objective sum_j p_j - sum_i B_i ln eta_i + sum_i (B_i ln B_i - B_i)

    The constant makes the value equal to the Eisenberg-Gale optimum at the
    equilibrium and an upper bound on it elsewhere.

    Raises:
        FeasibilityError: When p_j < a_ij eta_i for some pair
    """
    p = check_prices(instance, prices)
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (instance.n_services,) or (eta <= 0).any():
        raise ConfigError("eta must hold one positive entry per service")
    violations = infeasible_pairs(instance, p, eta)
    if violations:
        raise FeasibilityError("prices below a_ij * eta_i", violations)
    b = instance.budget_vector
    return float(p.sum() - b @ np.log(eta) + np.sum(b * np.log(b) - b))


def kkt_certificate(instance: MarketInstance, solution: EquilibriumSolution) -> CertificateReport:
    """
    Optimality residuals of a candidate equilibrium

    Args:
        instance: Market instance
        solution: Candidate allocation and prices

    Returns:
        CertificateReport; the duality gap uses eta_i = min_j p_j/a_ij
    """
    x = check_allocation(instance, solution.x, require_feasible=False)
    p = check_prices(instance, solution.p)
    s = solution.s
    b = instance.budget_vector
    a = instance.valuation_matrix
    u = (a * x).sum(axis=1) + s

    clearing_slack = float(np.max(np.abs(1.0 - x.sum(axis=0))))
    budget_slack = float(np.max(np.abs((x * p[np.newaxis, :]).sum(axis=1) + s - b)))

    if (u <= 0).any():
        mbb_violation = kkt_residual = float("inf")
    else:
        support_prices = a * (b / u)[:, np.newaxis]
        safe_p = np.maximum(p, TINY)[np.newaxis, :]
        mbb_violation = float(np.max(np.maximum(support_prices - p[np.newaxis, :], 0.0) / safe_p))
        held = x > TOL_FEAS
        cs = np.abs(p[np.newaxis, :] - support_prices) / safe_p
        kkt_residual = float(cs[held].max()) if held.any() else 0.0

    primal = primal_value(instance, x, s)
    eta = implied_eta(instance, p)
    duality_gap = dual_value(instance, p, eta) - primal
    return CertificateReport(
        max_kkt_residual=kkt_residual,
        duality_gap=duality_gap,
        clearing_slack=clearing_slack,
        budget_slack=budget_slack,
        mbb_violation=mbb_violation,
        primal_objective=primal,
    )


def certificate_passes(
    report: CertificateReport, tol: float, fields: Optional[Iterable[str]] = None, check_gap: bool = True
) -> bool:
    """True when the selected residuals and the relative duality gap are within tol"""
    fields = tuple(fields) if fields is not None else CertificateReport.RESIDUAL_FIELDS
    if report.worst(fields) > tol:
        return False
    if check_gap:
        gap = report.relative_gap()
        return bool(np.isfinite(gap) and -tol <= gap <= tol)
    return True


def polish(instance: MarketInstance, allocation: Allocation, iterations: int, converged: bool, method: SolverMethod) -> EquilibriumSolution:
    """
    Rescale columns to clear exactly and recompute prices from the utilities

    A column left empty by the engine is split evenly among the services
    that value it.
    """
    x = np.maximum(np.asarray(allocation, dtype=float), 0.0)
    sums = x.sum(axis=0)
    empty = sums <= 0
    if empty.any():
        logger.debug(f"Splitting empty EN columns {np.flatnonzero(empty).tolist()}")
        x[:, empty] = (instance.valuation_matrix[:, empty] > 0).astype(float)
        sums = x.sum(axis=0)
    x = x / sums[np.newaxis, :]
    prices = recover_prices(instance, x)
    return EquilibriumSolution.from_arrays(
        instance, x, prices, iterations=iterations, converged=converged, method=method
    )


def solve_eg(instance: MarketInstance, opts: Optional[EgOptions] = None) -> EquilibriumSolution:
    """
    Market equilibrium of the basic model from the Eisenberg-Gale program

    The default engine runs proportional response until prices settle and
    the bang-per-buck gap is below opts.certificate_tol, then clears every
    column exactly and recomputes prices. The projected gradient engine
    ascends the primal directly.

    Args:
        instance: Market instance
        opts: Solver options

    Returns:
        The equilibrium; prices refer to normalized budgets when
        opts.normalize_budgets is set

    Raises:
        ConvergenceError: With the polished best iterate when the engine stops early
    """
    opts = opts or EgOptions()
    if opts.normalize_budgets:
        instance = instance.normalized_budgets()
    logger.debug(f"Solving EG on {instance!r} with {opts.engine.value}")

    if opts.engine == EgEngine.PROJECTED_GRADIENT:
        return _solve_projected_gradient(instance, opts)

    dyn_opts = PropDynOptions(
        tol=opts.tol,
        max_iters=opts.max_iters,
        damping=opts.damping,
        mbb_tol=opts.certificate_tol,
        seed=opts.seed,
    )
    try:
        raw, _ = propdyn_run(instance, dyn_opts)
    except ConvergenceError as exc:
        best = polish(instance, exc.solution.x, exc.solution.iterations, False, SolverMethod.EG)
        raise ConvergenceError(
            str(exc), solution=best, residuals=kkt_certificate(instance, best).model_dump(), trace=exc.trace
        ) from exc
    solution = polish(instance, raw.x, raw.iterations, True, SolverMethod.EG)
    logger.info(f"EG solved in {solution.iterations} iterations, prices {np.round(solution.p, 6).tolist()}")
    return solution


def _solve_projected_gradient(instance: MarketInstance, opts: EgOptions) -> EquilibriumSolution:
    def residual(x, _):
        try:
            candidate = polish(instance, x, 0, True, SolverMethod.EG_PROJECTED_GRADIENT)
        except DegenerateAllocationError:
            return np.inf
        return kkt_certificate(instance, candidate).worst()

    result = LogUtilityAscent(instance).run(
        residual,
        opts.certificate_tol,
        opts.max_iters,
        NETPROFIT_OBJECTIVE_WINDOW,
        NETPROFIT_OBJECTIVE_RTOL,
    )
    solution = polish(
        instance, result.allocation, result.iterations, result.converged, SolverMethod.EG_PROJECTED_GRADIENT
    )
    if not result.converged:
        raise ConvergenceError(
            f"projected gradient did not converge in {opts.max_iters} iterations",
            solution=solution,
            residuals={"certificate": result.residual},
        )
    logger.info(f"EG (projected gradient) solved in {result.iterations} iterations")
    return solution
