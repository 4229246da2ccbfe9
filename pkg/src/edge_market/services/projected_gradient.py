"""
Projected gradient ascent on sum_i B_i ln u_i (minus total surplus when
surplus money is a variable).

EN columns are scaled by their largest valuation so that every scaled
variable contributes at most one unit of utility; the column constraint
becomes sum_i x'_ij <= max_i a_ij.
"""

import logging
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray

from edge_market.models.market import MarketInstance
from edge_market.utils.projection import project_capped_simplex

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 60
STEP_GROWTH = 1.5
MAX_MOVE = 10.0  # step cap, in units of the largest variable range


class AscentResult(NamedTuple):
    allocation: NDArray[np.float64]
    surpluses: NDArray[np.float64]
    iterations: int
    converged: bool
    residual: float


class LogUtilityAscent:
    """Projected gradient ascent with backtracking on one market"""

    def __init__(self, instance: MarketInstance, with_surplus: bool = False):
        """
        Args:
            instance: Market instance
            with_surplus: Optimize surplus money s_i >= 0 as well
        """
        self.instance = instance
        self.with_surplus = with_surplus
        self.budgets = instance.budget_vector
        self.scale = instance.valuation_matrix.max(axis=0)
        self.weights = instance.valuation_matrix / self.scale[np.newaxis, :]

    def utilities(self, scaled: NDArray[np.float64], surpluses: NDArray[np.float64]) -> NDArray[np.float64]:
        return (self.weights * scaled).sum(axis=1) + surpluses

    def objective(self, scaled: NDArray[np.float64], surpluses: NDArray[np.float64]) -> float:
        u = self.utilities(scaled, surpluses)
        if (u <= 0).any():
            return -np.inf
        return float(self.budgets @ np.log(u) - surpluses.sum())

    def max_step(self, grad_x: NDArray[np.float64], grad_s: NDArray[np.float64]) -> float:
        """Largest step moving no coordinate more than MAX_MOVE times the variable scale"""
        size = max(float(self.scale.max()), float(self.budgets.max()) if self.with_surplus else 0.0)
        steepest = max(float(np.abs(grad_x).max()), float(np.abs(grad_s).max()) if grad_s.size else 0.0)
        return MAX_MOVE * size / max(steepest, np.finfo(float).tiny)

    def project(self, scaled, surpluses):
        projected = project_capped_simplex(scaled, self.scale, axis=0)
        if not self.with_surplus:
            return projected, surpluses
        return projected, np.maximum(surpluses, 0.0)

    def run(
        self,
        residual: Callable[[NDArray[np.float64], NDArray[np.float64]], float],
        residual_tol: float,
        max_iters: int,
        window: int,
        rtol: float,
    ) -> AscentResult:
        """
        Ascend until the objective stalls and the residual callback passes

        Args:
            residual: Maps (allocation, surpluses) to an optimality residual
            residual_tol: Required residual
            max_iters: Iteration cap
            window: Iterations between objective comparisons
            rtol: Relative objective change counted as stalled

        Returns:
            AscentResult with the unscaled allocation
        """
        n = self.instance.n_services
        scaled = np.repeat(self.scale[np.newaxis, :] / (2 * n), n, axis=0)
        surpluses = self.budgets / 2 if self.with_surplus else np.zeros(n)
        u = self.utilities(scaled, surpluses)
        step = float(np.min(u**2 / self.budgets))

        value = self.objective(scaled, surpluses)
        history = [value]
        last_residual = np.inf
        for iteration in range(1, max_iters + 1):
            ratio = self.budgets / self.utilities(scaled, surpluses)
            grad_x = ratio[:, np.newaxis] * self.weights
            grad_s = ratio - 1.0 if self.with_surplus else np.zeros(n)
            step = min(step, self.max_step(grad_x, grad_s))

            for _ in range(MAX_BACKTRACKS):
                new_x, new_s = self.project(scaled + step * grad_x, surpluses + step * grad_s)
                dx, ds = new_x - scaled, new_s - surpluses
                new_value = self.objective(new_x, new_s)
                model = value + np.sum(grad_x * dx) + grad_s @ ds - (np.sum(dx**2) + ds @ ds) / (2 * step)
                if new_value >= model - 1e-14 * abs(value):
                    break
                step /= 2
            scaled, surpluses, value = new_x, new_s, new_value
            step *= STEP_GROWTH
            history.append(value)

            if iteration % window == 0:
                before = history[-window - 1]
                if abs(value - before) <= rtol * max(1.0, abs(value)):
                    last_residual = residual(self.unscale(scaled), surpluses)
                    if last_residual < residual_tol:
                        logger.debug(f"Gradient ascent stalled after {iteration} iterations")
                        return AscentResult(self.unscale(scaled), surpluses, iteration, True, last_residual)
                history = history[-window - 1:]

        last_residual = residual(self.unscale(scaled), surpluses)
        return AscentResult(self.unscale(scaled), surpluses, max_iters, False, last_residual)

    def unscale(self, scaled: NDArray[np.float64]) -> NDArray[np.float64]:
        return scaled / self.scale[np.newaxis, :]
