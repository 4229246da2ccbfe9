from typing import Any, Dict, List, Optional, Tuple


class EdgeMarketError(Exception):
    """Base class for all errors raised by edge_market"""


class DimensionError(EdgeMarketError):
    """Array shape does not match the market instance"""


class InvalidPriceError(EdgeMarketError):
    """A price vector contains a non-positive entry where positivity is required"""


class DegenerateAllocationError(EdgeMarketError):
    """Some service receives zero utility, so budget-weighted prices are undefined"""


class EmptyMarketError(EdgeMarketError):
    """Every service or every EN was dropped while building an instance"""


class StalledEnError(EdgeMarketError):
    """An EN receives no bids, so its price is zero and allocation undefined"""


class StepSizeError(EdgeMarketError):
    """Price iterates diverged; the step size is too large"""


class ConfigError(EdgeMarketError, ValueError):
    """Invalid parameter passed to a solver routine"""


class FeasibilityError(EdgeMarketError):
    """Dual variables violate p_j >= a_ij * eta_i"""

    def __init__(self, message: str, violations: List[Tuple[int, int]]):
        super().__init__(f"{message}: {len(violations)} violated pair(s) {violations[:10]}")
        self.violations = violations


class ConvergenceError(EdgeMarketError):
    """
    A solver hit its iteration cap

    Attributes:
        solution: Best iterate found (an EquilibriumSolution)
        residuals: Residual values at the best iterate
        trace: DynamicsTrace when the solver records one
    """

    def __init__(
        self,
        message: str,
        solution: Any = None,
        residuals: Optional[Dict[str, float]] = None,
        trace: Any = None,
    ):
        super().__init__(message)
        self.solution = solution
        self.residuals = residuals or {}
        self.trace = trace
