"""
Parameter sweeps over budgets, market size, price perturbations and
dynamics tolerances. Every point is solved independently on a thread pool
and rows come back in sweep order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from edge_market.models.market import MarketInstance
from edge_market.models.options import EgOptions, PropDynOptions
from edge_market.models.scenario import GenerationConfig
from edge_market.services.dynamics import propdyn_run
from edge_market.services.eg_core import solve_eg
from edge_market.services.market_model import aggregate_demand
from edge_market.services.scenario_gen import build_instance, generate
from edge_market.utils.exceptions import ConfigError
from edge_market.utils.io import worker_count

logger = logging.getLogger(__name__)

Row = Dict[str, Any]


def _ordered_map(func: Callable[[Any], Any], tasks: Sequence[Any]) -> List[Any]:
    tasks = list(tasks)
    if not tasks:
        return []
    with ThreadPoolExecutor(max_workers=worker_count(tasks)) as pool:
        return list(pool.map(func, tasks))


def table_fieldnames(rows: Sequence[Row]) -> List[str]:
    """Union of row keys in order of first appearance"""
    names: List[str] = []
    for row in rows:
        names.extend(key for key in row if key not in names)
    return names


def budget_ratio_sweep(
    instance: MarketInstance,
    ratios: Sequence[float],
    pair: Tuple[int, int] = (0, 1),
    opts: Optional[EgOptions] = None,
) -> List[Row]:
    """
    Vary the budget ratio B_a : B_b while keeping B_a + B_b and all other budgets

    Args:
        instance: Market instance with at least two services
        ratios: Positive values of B_a / B_b
        pair: Indices (a, b) of the two services
        opts: EG solver options

    Returns:
        Rows with ratio, u_1..u_N and p_1..p_M
    """
    first, second = pair
    if instance.n_services < 2 or first == second or max(first, second) >= instance.n_services:
        raise ConfigError(f"invalid service pair {pair} for N={instance.n_services}")
    if any(ratio <= 0 for ratio in ratios):
        raise ConfigError("budget ratios must be positive")
    total = instance.budget_vector[first] + instance.budget_vector[second]

    def solve(ratio: float) -> Row:
        budgets = instance.budget_vector.copy()
        budgets[first] = total * ratio / (1 + ratio)
        budgets[second] = total / (1 + ratio)
        solution = solve_eg(instance.with_budgets(budgets), opts)
        row: Row = {"ratio": float(ratio)}
        row.update({f"u_{i + 1}": value for i, value in enumerate(solution.utilities)})
        row.update({f"p_{j + 1}": value for j, value in enumerate(solution.prices)})
        return row

    logger.info(f"Budget ratio sweep over {len(ratios)} ratios for services {pair}")
    return _ordered_map(solve, ratios)


def _sized_config(config: GenerationConfig, vary: str, value: int) -> GenerationConfig:
    if vary not in ("n", "m"):
        raise ConfigError(f"vary must be 'n' or 'm', got {vary!r}")
    field = "n_services" if vary == "n" else "n_ens"
    return GenerationConfig.model_validate({**config.model_dump(), field: int(value)})


def size_sweep(
    config: GenerationConfig,
    vary: str,
    values: Sequence[int],
    seed: int,
    opts: Optional[EgOptions] = None,
) -> List[Row]:
    """
    Regenerate the market with a varying number of services or ENs

    Generation draws candidate pools before selecting, so for a fixed seed
    the services of a smaller market are the leading services of a larger
    one and utilities can be compared column by column.

    Args:
        config: Base generator configuration
        vary: "n" for the number of services, "m" for the number of ENs
        values: Sizes to generate
        seed: Generator seed shared by every point
        opts: EG solver options

    Returns:
        Rows with value and u_1..u_N
    """

    def solve(value: int) -> Row:
        scenario = generate(_sized_config(config, vary, value), seed)
        instance, _ = build_instance(scenario, label=f"{vary}={value}")
        solution = solve_eg(instance, opts)
        row: Row = {"value": int(value)}
        row.update({f"u_{i + 1}": u for i, u in enumerate(solution.utilities)})
        return row

    return _ordered_map(solve, values)


def price_perturbation(
    instance: MarketInstance,
    delta: float = 0.01,
    random_bounds: Tuple[float, float] = (5e-4, 3e-4),
    seed: int = 0,
    opts: Optional[EgOptions] = None,
) -> List[Row]:
    """
    Total demand per EN at the equilibrium prices and at perturbed prices

    P1 adds delta to every price, P2 subtracts it, P3 and P4 add uniform
    noise drawn from [0, bound) for each of the two bounds.

    Returns:
        Rows with label, d_1..d_M and max_excess = max_j |d_j - 1|
    """
    solution = solve_eg(instance, opts)
    p_star = solution.p
    rng = np.random.default_rng(seed)
    candidates = [
        ("ME", p_star),
        ("P1", p_star + delta),
        ("P2", np.maximum(p_star - delta, np.finfo(float).tiny)),
    ]
    for k, bound in enumerate(random_bounds, start=3):
        candidates.append((f"P{k}", p_star + rng.uniform(0.0, bound, size=instance.n_ens)))

    rows = []
    for label, prices in candidates:
        demand = aggregate_demand(instance, prices)
        row: Row = {"label": label}
        row.update({f"d_{j + 1}": value for j, value in enumerate(demand.tolist())})
        row["max_excess"] = float(np.max(np.abs(demand - 1.0)))
        rows.append(row)
    return rows


def convergence_study(
    config: GenerationConfig,
    vary: str,
    values: Sequence[int],
    tolerances: Sequence[float],
    datasets: int = 10,
    seed: int = 0,
) -> List[Row]:
    """
    Average PropDyn iteration counts over generated markets

    Dataset k of every point uses seed + k.

    Returns:
        Rows with value, tol, mean_iterations and max_iterations
    """
    if datasets < 1:
        raise ConfigError("datasets must be at least 1")
    points = [(value, tol) for value in values for tol in tolerances]
    tasks = [(value, tol, k) for value, tol in points for k in range(datasets)]

    def run(task) -> int:
        value, tol, k = task
        instance, _ = build_instance(generate(_sized_config(config, vary, value), seed + k))
        solution, _ = propdyn_run(instance, PropDynOptions(tol=tol))
        return solution.iterations

    counts = _ordered_map(run, tasks)
    rows = []
    for index, (value, tol) in enumerate(points):
        chunk = counts[index * datasets : (index + 1) * datasets]
        rows.append(
            {
                "value": int(value),
                "tol": float(tol),
                "mean_iterations": float(np.mean(chunk)),
                "max_iterations": int(np.max(chunk)),
            }
        )
    return rows
