import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from edge_market.models.market import MarketInstance
from edge_market.models.scenario import EcScenario, GenerationConfig
from edge_market.utils.constants import RNG_ALGORITHM
from edge_market.utils.exceptions import ConfigError, EmptyMarketError

logger = logging.getLogger(__name__)


def effective_rate(mu: float, t_max: float, net_delay: float) -> float:
    """
    Largest request rate an EN computing unit serves within the delay tolerance

    q = max(mu - 1/(t_max - net_delay), 0) when net_delay < t_max, else 0.
    """
    if net_delay >= t_max:
        return 0.0
    return max(mu - 1.0 / (t_max - net_delay), 0.0)


def effective_rates(scenario: EcScenario) -> np.ndarray:
    """Vectorized effective_rate over every service/EN pair"""
    mu = np.asarray(scenario.mu, dtype=float)
    delay = np.asarray(scenario.net_delay, dtype=float)
    slack = np.asarray(scenario.t_max, dtype=float)[:, np.newaxis] - delay
    q = np.zeros_like(mu)
    reachable = slack > 0
    q[reachable] = mu[reachable] - 1.0 / slack[reachable]
    return np.maximum(q, 0.0)


def build_instance(
    scenario: EcScenario, budgets: Optional[Sequence[float]] = None, label: str = ""
) -> Tuple[MarketInstance, List[str]]:
    """
    Turn a scenario into a market with valuations a_ij = r_i * q_ij * c_j

    Services that value no EN and ENs that no service values are dropped and
    reported in the returned warnings and in the instance provenance.

    Args:
        scenario: Edge-computing scenario
        budgets: Budget per scenario service; one unit each when omitted
        label: Label of the resulting instance

    Returns:
        The market instance and the list of drop warnings
    """
    n = scenario.n_services
    b = np.ones(n) if budgets is None else np.asarray(budgets, dtype=float)
    if b.shape != (n,):
        raise ConfigError(f"expected {n} budgets, got {b.shape[0] if b.ndim else 1}")

    q = effective_rates(scenario)
    capacity = np.asarray(scenario.raw_capacity, dtype=float)
    a = np.asarray(scenario.r, dtype=float)[:, np.newaxis] * q * capacity[np.newaxis, :]

    warnings: List[str] = []
    kept_services = np.flatnonzero(a.max(axis=1) > 0)
    for i in np.setdiff1d(np.arange(n), kept_services):
        warnings.append(f"service {i} reaches no EN within its delay tolerance and was dropped")
    if kept_services.size == 0:
        raise EmptyMarketError("every service was dropped; no EN is reachable")

    a = a[kept_services]
    kept_ens = np.flatnonzero(a.max(axis=0) > 0)
    for j in np.setdiff1d(np.arange(scenario.n_ens), kept_ens):
        warnings.append(f"EN {j} is valued by no service and was dropped")
    if kept_ens.size == 0:
        raise EmptyMarketError("every EN was dropped")

    for message in warnings:
        logger.warning(message)

    instance = MarketInstance(
        label=label,
        budgets=b[kept_services].tolist(),
        valuations=a[:, kept_ens].tolist(),
        raw_capacities=capacity[kept_ens].tolist(),
        provenance={
            "seed": scenario.seed,
            "rng": scenario.rng,
            "kept_services": kept_services.tolist(),
            "kept_ens": kept_ens.tolist(),
            "dropped_services": np.setdiff1d(np.arange(n), kept_services).tolist(),
            "dropped_ens": np.setdiff1d(np.arange(scenario.n_ens), kept_ens).tolist(),
        },
    )
    return instance, warnings


def generate(params: GenerationConfig, seed: Optional[int] = None) -> EcScenario:
    """
    Draw a random edge-computing scenario

    Candidate EN sites and service locations are drawn first as pools, each
    with all of its attributes, and M ENs and N services are then picked by
    a seeded permutation. Two configs that differ only in M or N therefore
    share the leading ENs and services.

    Args:
        params: Generator configuration
        seed: Seed of the PCG64 generator

    Returns:
        The generated scenario
    """
    if not isinstance(params, GenerationConfig):
        try:
            params = GenerationConfig.model_validate(params)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    rng = np.random.Generator(np.random.PCG64(seed))
    side = params.area_km
    en_pool = rng.uniform(0.0, side, size=(params.en_pool, 2))
    capacity_pool = rng.integers(
        params.capacity_range[0], params.capacity_range[1], size=params.en_pool, endpoint=True
    )
    service_pool = rng.uniform(0.0, side, size=(params.service_pool, 2))
    t_max_pool = rng.uniform(*params.t_max_range, size=params.service_pool)
    revenue_pool = rng.uniform(*params.revenue_range, size=params.service_pool)
    mu_pool = rng.uniform(*params.mu_range, size=(params.service_pool, params.en_pool))

    ens = rng.permutation(params.en_pool)[: params.n_ens]
    services = rng.permutation(params.service_pool)[: params.n_services]

    en_positions = en_pool[ens]
    service_positions = service_pool[services]
    distance = np.linalg.norm(
        service_positions[:, np.newaxis, :] - en_positions[np.newaxis, :, :], axis=2
    )
    logger.debug(f"Generated scenario N={params.n_services} M={params.n_ens} seed={seed}")
    return EcScenario(
        area_km=side,
        en_positions=[tuple(point) for point in en_positions.tolist()],
        service_positions=[tuple(point) for point in service_positions.tolist()],
        mu=mu_pool[np.ix_(services, ens)].tolist(),
        t_max=t_max_pool[services].tolist(),
        net_delay=(params.delay_per_km * distance).tolist(),
        r=revenue_pool[services].tolist(),
        raw_capacity=capacity_pool[ens].astype(float).tolist(),
        seed=seed,
        rng=RNG_ALGORITHM,
        delay_per_km=params.delay_per_km,
    )
