from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class FairnessReport(BaseModel):
    """Fairness and efficiency audit of one allocation"""

    ef_index: float = Field(ge=0, description="min_{i,k} (u_i(x_i)/B_i)/(u_i(x_k)/B_k), capped at 1")
    proportionality_ratios: List[float] = Field(
        description="u_i(x_i) / ((B_i/sum B) * u_i(all ENs))"
    )
    sharing_incentive_margins: List[float] = Field(
        description="u_i(x_i) - u_i(proportional share)"
    )
    budget_exhaustion_slacks: List[float] = Field(
        description="|sum_j p_j x_ij + s_i - B_i| at the supporting prices"
    )
    pareto_certified: bool = False
    pareto_gap: Optional[float] = Field(
        None, description="Certificate residual backing the Pareto flag"
    )
    utilities: List[float] = Field(description="u_i(x_i) of the audited allocation")

    @model_validator(mode="after")
    def validate_finite(self):
        """All reported numbers must be finite."""
        for name in (
            "proportionality_ratios",
            "sharing_incentive_margins",
            "budget_exhaustion_slacks",
            "utilities",
        ):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        return self

    @property
    def total_utility(self) -> float:
        return float(np.sum(self.utilities))

    @property
    def min_utility(self) -> float:
        return float(np.min(self.utilities))

    @property
    def min_proportionality_ratio(self) -> float:
        return float(np.min(self.proportionality_ratios))

    @property
    def min_sharing_incentive_margin(self) -> float:
        return float(np.min(self.sharing_incentive_margins))


class DynamicsTrace(BaseModel):
    """Per-iteration record of an iterative price/bid process"""

    prices: List[List[float]] = Field(default_factory=list)
    residuals: List[float] = Field(default_factory=list)
    bids: Optional[List[List[List[float]]]] = None

    def record(self, prices: np.ndarray, residual: float, bids: Optional[np.ndarray] = None):
        """Append one iteration"""
        self.prices.append(np.asarray(prices, dtype=float).tolist())
        self.residuals.append(float(residual))
        if bids is not None:
            if self.bids is None:
                self.bids = []
            self.bids.append(np.asarray(bids, dtype=float).tolist())

    def __len__(self) -> int:
        return len(self.residuals)

    @model_validator(mode="after")
    def validate_lengths(self):
        """Every recorded iteration has a price vector and a residual."""
        if len(self.prices) != len(self.residuals):
            raise ValueError("trace prices and residuals differ in length")
        if self.bids is not None and len(self.bids) != len(self.residuals):
            raise ValueError("trace bids and residuals differ in length")
        return self
