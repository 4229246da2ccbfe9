"""Utility and bang-per-buck arithmetic shared by every solver."""

from typing import List, NamedTuple

import numpy as np
from numpy.typing import NDArray

from edge_market.models.market import Allocation, MarketInstance, PriceVector, check_allocation, check_prices
from edge_market.utils.constants import TOL_MBB
from edge_market.utils.exceptions import DimensionError, InvalidPriceError


class MbbResult(NamedTuple):
    """Maximum bang-per-buck of one service and the ENs attaining it"""

    alpha: float
    demand_set: List[int]


def _check_service(instance: MarketInstance, service: int) -> int:
    if not 0 <= service < instance.n_services:
        raise DimensionError(f"service index {service} out of range for N={instance.n_services}")
    return service


def _positive_prices(instance: MarketInstance, prices) -> PriceVector:
    p = check_prices(instance, prices)
    if (p <= 0).any():
        raise InvalidPriceError(f"prices must be positive, got {p.tolist()}")
    return p


def utility(instance: MarketInstance, allocation: Allocation, service: int) -> float:
    """
    Linear utility u_i(x_i) = sum_j a_ij x_ij

    Args:
        instance: Market instance
        allocation: N x M allocation matrix
        service: Service index i

    Returns:
        The utility of service i
    """
    x = check_allocation(instance, allocation, require_feasible=False)
    _check_service(instance, service)
    return float(instance.valuation_matrix[service] @ x[service])


def utilities(instance: MarketInstance, allocation: Allocation) -> NDArray[np.float64]:
    """Vector of linear utilities of every service"""
    x = check_allocation(instance, allocation, require_feasible=False)
    return (instance.valuation_matrix * x).sum(axis=1)


def bang_per_buck(instance: MarketInstance, prices) -> NDArray[np.float64]:
    """N x M matrix a_ij / p_j for strictly positive prices"""
    p = _positive_prices(instance, prices)
    return instance.valuation_matrix / p[np.newaxis, :]


def mbb(instance: MarketInstance, prices, service: int) -> MbbResult:
    """
    Maximum bang-per-buck and demand set of one service

    Membership uses a relative tolerance: a_ij/p_j >= alpha - TOL_MBB * alpha.

    Args:
        instance: Market instance
        prices: Length-M strictly positive prices
        service: Service index i

    Returns:
        MbbResult with alpha and the sorted demand set
    """
    _check_service(instance, service)
    ratios = bang_per_buck(instance, prices)[service]
    alpha = float(ratios.max())
    demand_set = np.flatnonzero(ratios >= alpha - TOL_MBB * alpha).tolist()
    return MbbResult(alpha=alpha, demand_set=demand_set)


def aggregate_demand(instance: MarketInstance, prices) -> NDArray[np.float64]:
    """
    Total demand per EN when every service spends its budget on its demand set

    Money is split evenly among the tied ENs of a demand set, so the result is
    one canonical point of the demand correspondence. At equilibrium prices
    every entry is one only when that split happens to clear the market; use
    it to see how far perturbed prices are from clearing.
    """
    p = _positive_prices(instance, prices)
    demand = np.zeros(instance.n_ens)
    for i, budget in enumerate(instance.budget_vector):
        tied = mbb(instance, p, i).demand_set
        demand[tied] += budget / len(tied) / p[tied]
    return demand
