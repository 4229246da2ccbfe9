from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from edge_market.utils.constants import (
    DEFAULT_AREA_KM,
    DEFAULT_CAPACITY_RANGE,
    DEFAULT_DELAY_PER_KM,
    DEFAULT_EN_POOL,
    DEFAULT_MU_RANGE,
    DEFAULT_REVENUE_RANGE,
    DEFAULT_SERVICE_POOL,
    DEFAULT_T_MAX_RANGE,
    RNG_ALGORITHM,
)


class GenerationConfig(BaseModel):
    """Parameters of the random edge-computing scenario generator"""

    n_ens: int = Field(8, ge=1, description="Number of ENs M")
    n_services: int = Field(4, ge=1, description="Number of services N")
    area_km: float = Field(DEFAULT_AREA_KM, gt=0, description="Side of the square area")
    en_pool: int = Field(DEFAULT_EN_POOL, ge=1, description="Candidate EN sites")
    service_pool: int = Field(DEFAULT_SERVICE_POOL, ge=1, description="Candidate service locations")
    t_max_range: Tuple[float, float] = Field(DEFAULT_T_MAX_RANGE, description="T_i^max bounds")
    mu_range: Tuple[float, float] = Field(DEFAULT_MU_RANGE, description="mu_ij bounds")
    revenue_range: Tuple[float, float] = Field(
        DEFAULT_REVENUE_RANGE, description="Revenue r_i per successful request"
    )
    capacity_range: Tuple[int, int] = Field(
        DEFAULT_CAPACITY_RANGE, description="Computing units per EN, inclusive"
    )
    delay_per_km: float = Field(
        DEFAULT_DELAY_PER_KM, ge=0, description="Network delay per km of Euclidean distance"
    )

    @field_validator("t_max_range", "mu_range", "revenue_range")
    def validate_positive_range(cls, value):
        """Ranges must be non-empty and strictly positive."""
        low, high = value
        if not (0 < low <= high) or not np.isfinite(high):
            raise ValueError(f"invalid range {value}")
        return value

    @field_validator("capacity_range")
    def validate_capacity_range(cls, value):
        low, high = value
        if not (1 <= low <= high):
            raise ValueError(f"invalid capacity range {value}")
        return value

    @model_validator(mode="after")
    def grow_pools(self):
        """Pools always hold at least the requested number of ENs and services."""
        self.en_pool = max(self.en_pool, self.n_ens)
        self.service_pool = max(self.service_pool, self.n_services)
        return self


class EcScenario(BaseModel):
    """
    Geometric edge-computing layout with latency and queueing parameters.

    Index i runs over services and j over ENs; times share one time unit.
    """

    area_km: float = Field(gt=0)
    en_positions: List[Tuple[float, float]] = Field(description="EN coordinates in km")
    service_positions: List[Tuple[float, float]] = Field(description="Service PoA coordinates in km")
    mu: List[List[float]] = Field(description="Service rate mu_ij of one computing unit")
    t_max: List[float] = Field(description="Delay tolerance T_i^max")
    net_delay: List[List[float]] = Field(description="Round-trip network delay d_ij")
    r: List[float] = Field(description="Revenue per successful request r_i")
    raw_capacity: List[float] = Field(description="Computing units c_j")
    seed: Optional[int] = None
    rng: str = RNG_ALGORITHM
    delay_per_km: float = DEFAULT_DELAY_PER_KM

    @model_validator(mode="after")
    def validate_scenario(self):
        """Check shapes and parameter signs."""
        n, m = len(self.service_positions), len(self.en_positions)
        if n == 0 or m == 0:
            raise ValueError("scenario needs at least one service and one EN")
        mu = np.asarray(self.mu, dtype=float)
        delay = np.asarray(self.net_delay, dtype=float)
        if mu.shape != (n, m) or delay.shape != (n, m):
            raise ValueError(f"mu and net_delay must be {n}x{m}")
        if len(self.t_max) != n or len(self.r) != n or len(self.raw_capacity) != m:
            raise ValueError("t_max and r need N entries, raw_capacity needs M")
        if (mu <= 0).any():
            raise ValueError("service rates must be positive")
        if (delay < 0).any():
            raise ValueError("network delays must be non-negative")
        if min(self.t_max) <= 0 or min(self.r) <= 0:
            raise ValueError("delay tolerances and revenues must be positive")
        if min(self.raw_capacity) < 1:
            raise ValueError("every EN needs at least one computing unit")
        return self

    @property
    def n_services(self) -> int:
        return len(self.service_positions)

    @property
    def n_ens(self) -> int:
        return len(self.en_positions)
