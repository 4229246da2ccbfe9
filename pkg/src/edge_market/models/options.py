from enum import Enum
from typing import List, Optional, Union

from pydantic import BaseModel, Field, field_validator

from edge_market.utils.constants import (
    CLI_CERTIFICATE_TOL,
    DEFAULT_CERTIFICATE_TOL,
    DEFAULT_CES_P0,
    DEFAULT_CES_STEP,
    DEFAULT_MAX_ITERS,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_PRICE_TOL,
    DEFAULT_RHO,
    NETPROFIT_OBJECTIVE_RTOL,
    NETPROFIT_OBJECTIVE_WINDOW,
)


class EgEngine(str, Enum):
    PROPORTIONAL_RESPONSE = "proportional_response"
    PROJECTED_GRADIENT = "projected_gradient"


class StepSchedule(str, Enum):
    CONSTANT = "constant"
    DIMINISHING = "diminishing"


class PropDynOptions(BaseModel):
    """Options of the proportional response dynamics"""

    tol: float = Field(DEFAULT_PRICE_TOL, gt=0, description="Relative price change threshold")
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1)
    damping: float = Field(1.0, gt=0, le=1, description="Weight of the new bids in each step")
    mbb_tol: Optional[float] = Field(
        None, gt=0, description="Also require the bang-per-buck gap to fall below this"
    )
    seed: Optional[int] = Field(None, description="Randomize initial bids instead of B_i/M")
    record_bids: bool = False


class EgOptions(BaseModel):
    """Options of the centralized Eisenberg-Gale solve"""

    engine: EgEngine = EgEngine.PROPORTIONAL_RESPONSE
    tol: float = Field(DEFAULT_PRICE_TOL, gt=0, description="Relative price change threshold")
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1)
    certificate_tol: float = Field(DEFAULT_CERTIFICATE_TOL, gt=0)
    damping: float = Field(1.0, gt=0, le=1)
    normalize_budgets: bool = Field(False, description="Rescale budgets to sum to one")
    seed: Optional[int] = None


class CesOptions(BaseModel):
    """Options of the CES dual decomposition"""

    rho: float = Field(DEFAULT_RHO, gt=0, lt=1)
    step: float = Field(DEFAULT_CES_STEP, gt=0, description="Price step size alpha")
    tol: float = Field(
        1e-10, gt=0, description="Absolute price change threshold; excess demand ends below tol/step"
    )
    p0: Union[float, List[float]] = Field(DEFAULT_CES_P0, description="Initial prices")
    schedule: StepSchedule = StepSchedule.CONSTANT
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1)

    @field_validator("p0")
    def validate_p0(cls, value):
        """Initial prices must be positive."""
        values = value if isinstance(value, list) else [value]
        if not values or min(values) <= 0:
            raise ValueError("initial prices must be positive")
        return value


class PropBrOptions(BaseModel):
    """Options of the round-robin best-response dynamics"""

    tol: float = Field(1e-8, gt=0, description="Max bid change between rounds")
    max_rounds: int = Field(DEFAULT_MAX_ROUNDS, ge=1)
    cycle_window: int = Field(
        8, ge=2, description="Rounds kept to detect the bids revisiting an earlier state"
    )


class NetProfitOptions(BaseModel):
    """Options of the projected gradient solve of the net-profit program"""

    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1)
    certificate_tol: float = Field(CLI_CERTIFICATE_TOL, gt=0)
    objective_rtol: float = Field(NETPROFIT_OBJECTIVE_RTOL, gt=0)
    objective_window: int = Field(NETPROFIT_OBJECTIVE_WINDOW, ge=1)


class MaxminOptions(BaseModel):
    """Options of the maxmin baseline"""

    tol: float = Field(1e-9, gt=0, description="Relative slack on the optimal minimum utility")
