"""
Net-profit market: services keep unspent money s_i, and utility is
sum_j a_ij x_ij + s_i. The equilibrium maximizes sum_i (B_i ln u_i - s_i).
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from edge_market.models.market import (
    CertificateReport,
    EquilibriumSolution,
    MarketInstance,
    SolverMethod,
    check_allocation,
    check_prices,
)
from edge_market.models.options import NetProfitOptions
from edge_market.services.eg_core import infeasible_pairs, implied_eta, recover_prices
from edge_market.services.projected_gradient import LogUtilityAscent
from edge_market.utils.constants import TOL_FEAS
from edge_market.utils.exceptions import ConfigError, ConvergenceError, DegenerateAllocationError, FeasibilityError
from edge_market.utils.io import write_csv

logger = logging.getLogger(__name__)

TINY = np.finfo(float).tiny


class SweepRow(BaseModel):
    """Net-profit equilibrium at one budget scale"""

    scale: float = Field(gt=0)
    prices: List[float]
    utilities: List[float]
    surplus_ratios: List[float] = Field(description="s_i / B_i")
    surpluses: List[float]
    converged: bool = True


def netprofit_primal_value(instance: MarketInstance, allocation, surpluses) -> float:
    """sum_i (B_i ln u_i - s_i); -inf when some utility is zero"""
    x = check_allocation(instance, allocation, require_feasible=False)
    s = np.asarray(surpluses, dtype=float)
    u = (instance.valuation_matrix * x).sum(axis=1) + s
    if (u <= 0).any():
        return -np.inf
    return float(instance.budget_vector @ np.log(u) - s.sum())


def netprofit_dual_value(instance: MarketInstance, prices, eta) -> float:
    """
    Dual of the net-profit program; same objective as the basic dual with eta_i <= 1

    Raises:
        FeasibilityError: When p_j < a_ij eta_i for some pair or some eta_i > 1
    """
    p = check_prices(instance, prices)
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (instance.n_services,) or (eta <= 0).any():
        raise ConfigError("eta must hold one positive entry per service")
    violations = infeasible_pairs(instance, p, eta)
    capped = [(int(i), -1) for i in np.flatnonzero(eta > 1 + 1e-9)]
    if violations or capped:
        raise FeasibilityError("dual variables infeasible", violations + capped)
    b = instance.budget_vector
    return float(p.sum() - b @ np.log(eta) + np.sum(b * np.log(b) - b))


def netprofit_certificate(instance: MarketInstance, solution: EquilibriumSolution) -> CertificateReport:
    """
    Optimality residuals of a net-profit equilibrium

    max_kkt_residual collects the relative utility floor violation
    (B_i - u_i)/B_i, the surplus complementarity |u_i - B_i|/B_i over
    services holding surplus, the support condition over held pairs and the
    relative gap between the reported and the recovered prices.
    """
    x = check_allocation(instance, solution.x, require_feasible=False)
    p = check_prices(instance, solution.p)
    s = solution.s
    b = instance.budget_vector
    a = instance.valuation_matrix
    u = (a * x).sum(axis=1) + s

    clearing_slack = float(np.max(np.abs(1.0 - x.sum(axis=0))[p > 0])) if (p > 0).any() else 0.0
    budget_slack = float(np.max(np.abs((x * p[np.newaxis, :]).sum(axis=1) + s - b)))

    if (u <= 0).any():
        kkt_residual = mbb_violation = float("inf")
    else:
        floor = np.maximum(b - u, 0.0) / b
        saving = s > TOL_FEAS * b
        complementarity = np.where(saving, np.abs(u - b) / b, 0.0)
        support_prices = a * (b / u)[:, np.newaxis]
        safe_p = np.maximum(p, TINY)[np.newaxis, :]
        mbb_violation = float(np.max(np.maximum(support_prices - p[np.newaxis, :], 0.0) / safe_p))
        held = x > TOL_FEAS
        support = np.abs(p[np.newaxis, :] - support_prices)[held] / np.broadcast_to(safe_p, x.shape)[held]
        recovered = support_prices.max(axis=0)
        price_gap = np.abs(p - recovered) / np.maximum(recovered, TINY)
        kkt_residual = float(
            max(
                floor.max(),
                complementarity.max(),
                support.max() if support.size else 0.0,
                price_gap.max(),
            )
        )

    primal = netprofit_primal_value(instance, x, s)
    eta = implied_eta(instance, p, cap=1.0)
    duality_gap = netprofit_dual_value(instance, p, eta) - primal
    return CertificateReport(
        max_kkt_residual=kkt_residual,
        duality_gap=duality_gap,
        clearing_slack=clearing_slack,
        budget_slack=budget_slack,
        mbb_violation=mbb_violation,
        primal_objective=primal,
    )


def _solution(instance: MarketInstance, allocation, surpluses, iterations: int, converged: bool) -> EquilibriumSolution:
    s = np.maximum(np.asarray(surpluses, dtype=float), 0.0)
    prices = recover_prices(instance, allocation, s)
    return EquilibriumSolution.from_arrays(
        instance,
        allocation,
        prices,
        surpluses=s,
        iterations=iterations,
        converged=converged,
        method=SolverMethod.NETPROFIT,
    )


def netprofit_residual(instance: MarketInstance, report: CertificateReport) -> float:
    """
    Largest net-profit certificate residual

    The budget slack is taken relative to max(1, max_i B_i) and the duality
    gap relative to the primal value, so large budgets are not held to an
    absolute threshold.
    """
    gap = report.relative_gap()
    if not np.isfinite(gap):
        return float("inf")
    scale = max(1.0, float(instance.budget_vector.max()))
    return max(
        report.max_kkt_residual,
        report.clearing_slack,
        report.mbb_violation,
        report.budget_slack / scale,
        abs(gap),
    )


def solve_netprofit(instance: MarketInstance, opts: Optional[NetProfitOptions] = None) -> EquilibriumSolution:
    """
    Net-profit equilibrium by projected gradient ascent on (X, s)

    Args:
        instance: Market instance
        opts: Solver options

    Returns:
        Solution with surpluses and prices p_j = max_i B_i a_ij / u_i

    Raises:
        ConvergenceError: With the last iterate when opts.max_iters is reached
    """
    opts = opts or NetProfitOptions()
    logger.debug(f"Solving net-profit market on {instance!r}")

    def residual(x, s):
        try:
            candidate = _solution(instance, x, s, 0, True)
            return netprofit_residual(instance, netprofit_certificate(instance, candidate))
        except DegenerateAllocationError:
            return np.inf

    result = LogUtilityAscent(instance, with_surplus=True).run(
        residual, opts.certificate_tol, opts.max_iters, opts.objective_window, opts.objective_rtol
    )
    solution = _solution(instance, result.allocation, result.surpluses, result.iterations, result.converged)
    if not result.converged:
        logger.warning(f"Net-profit solve stopped after {opts.max_iters} iterations")
        raise ConvergenceError(
            f"net-profit solve did not converge in {opts.max_iters} iterations",
            solution=solution,
            residuals=netprofit_certificate(instance, solution).model_dump(),
        )
    logger.info(f"Net-profit market solved in {result.iterations} iterations")
    return solution


def budget_sweep(
    instance: MarketInstance, scales: Sequence[float], opts: Optional[NetProfitOptions] = None
) -> List[SweepRow]:
    """
    Solve the net-profit market with every budget multiplied by each scale

    Args:
        instance: Market instance
        scales: Ascending positive multipliers
        opts: Solver options

    Returns:
        One row per scale; rows of runs that hit the iteration cap carry
        converged=False
    """
    scales = [float(scale) for scale in scales]
    if any(scale <= 0 for scale in scales):
        raise ConfigError("budget scales must be positive")
    if scales != sorted(scales):
        raise ConfigError("budget scales must be sorted ascending")

    rows = []
    for scale in scales:
        scaled = instance.with_budgets(instance.budget_vector * scale)
        try:
            solution = solve_netprofit(scaled, opts)
        except ConvergenceError as exc:
            logger.warning(f"Budget scale {scale}: {exc}")
            solution = exc.solution
        rows.append(
            SweepRow(
                scale=scale,
                prices=solution.prices,
                utilities=solution.utilities,
                surpluses=solution.surpluses,
                surplus_ratios=(solution.s / scaled.budget_vector).tolist(),
                converged=solution.converged,
            )
        )
    return rows


def sweep_table(rows: Sequence[SweepRow], include_converged: bool = True) -> List[Dict[str, Any]]:
    """
    Flatten sweep rows to scale, p_1..p_M, u_1..u_N, s_1..s_N columns

    A trailing ``converged`` column flags scales whose solve hit the
    iteration cap; readers that expect only the numeric columns can drop it
    with ``include_converged=False``.
    """
    table = []
    for row in rows:
        record: Dict[str, Any] = {"scale": row.scale}
        record.update({f"p_{j + 1}": value for j, value in enumerate(row.prices)})
        record.update({f"u_{i + 1}": value for i, value in enumerate(row.utilities)})
        record.update({f"s_{i + 1}": value for i, value in enumerate(row.surpluses)})
        if include_converged:
            record["converged"] = row.converged
        table.append(record)
    return table


def write_sweep_csv(rows: Sequence[SweepRow], path: Path, include_converged: bool = True) -> Path:
    return write_csv(sweep_table(rows, include_converged), path)
