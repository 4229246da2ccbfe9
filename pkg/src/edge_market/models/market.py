from enum import Enum
from functools import cached_property
from typing import Any, ClassVar, Dict, Iterable, List, Optional

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from edge_market.utils.constants import TOL_FEAS, TOL_NUM
from edge_market.utils.exceptions import DimensionError

# N x M matrix of capacity fractions x_ij
Allocation = NDArray[np.float64]
# length-M vector of prices per (normalized) unit of EN capacity
PriceVector = NDArray[np.float64]


def _frozen(array: NDArray[np.float64]) -> NDArray[np.float64]:
    array.flags.writeable = False
    return array


class MarketInstance(BaseModel):
    """
    A Fisher market of N services (buyers) and M edge nodes (goods).

    EN capacities are normalized to one unit each; raw capacities from a
    scenario are kept in ``raw_capacities`` for display only.

    Example JSON:
    {
      "label": "six-example",
      "budgets": [1.0, 4.0],
      "valuations": [[1.0, 10.0, 4.0], [4.0, 8.0, 8.0]]
    }
    """

    label: str = Field("", description="Free-text instance label")
    budgets: List[float] = Field(description="Budget B_i of every service")
    valuations: List[List[float]] = Field(
        description="Utility per capacity unit a_ij, one row per service"
    )
    raw_capacities: Optional[List[float]] = Field(
        None, description="Computing units c_j of every EN before normalization"
    )
    provenance: Dict[str, Any] = Field(
        default_factory=dict, description="Generator metadata (seed, dropped rows)"
    )

    model_config = ConfigDict(frozen=True)

    @field_validator("budgets")
    def validate_budgets(cls, value):
        """Every budget must be finite and strictly positive."""
        if not value:
            raise ValueError("at least one service is required")
        for i, b in enumerate(value):
            if not np.isfinite(b) or b <= 0:
                raise ValueError(f"budget of service {i} must be positive, got {b}")
        return value

    @field_validator("valuations")
    def validate_valuations(cls, value):
        """Valuations must form a non-empty rectangular matrix of finite, non-negative entries."""
        if not value or not value[0]:
            raise ValueError("valuation matrix must be non-empty")
        width = len(value[0])
        for i, row in enumerate(value):
            if len(row) != width:
                raise ValueError(f"valuation row {i} has {len(row)} entries, expected {width}")
            for j, a in enumerate(row):
                if not np.isfinite(a) or a < 0:
                    raise ValueError(f"valuation a[{i}][{j}] must be finite and >= 0, got {a}")
        return value

    @model_validator(mode="after")
    def validate_market(self):
        """Check dimensions and that every service and every EN is valued."""
        if len(self.budgets) != len(self.valuations):
            raise ValueError(
                f"{len(self.budgets)} budgets given for {len(self.valuations)} services"
            )
        a = np.asarray(self.valuations, dtype=float)
        empty_rows = np.flatnonzero(a.max(axis=1) <= 0)
        if empty_rows.size:
            raise ValueError(f"services {empty_rows.tolist()} value no EN")
        empty_cols = np.flatnonzero(a.max(axis=0) <= 0)
        if empty_cols.size:
            raise ValueError(f"ENs {empty_cols.tolist()} are valued by no service")
        if self.raw_capacities is not None and len(self.raw_capacities) != a.shape[1]:
            raise ValueError("raw_capacities must have one entry per EN")
        return self

    @property
    def n_services(self) -> int:
        return len(self.budgets)

    @property
    def n_ens(self) -> int:
        return len(self.valuations[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_services, self.n_ens

    @cached_property
    def budget_vector(self) -> NDArray[np.float64]:
        """Read-only numpy view of the budgets"""
        return _frozen(np.asarray(self.budgets, dtype=float))

    @cached_property
    def valuation_matrix(self) -> NDArray[np.float64]:
        """Read-only numpy view of the valuations"""
        return _frozen(np.asarray(self.valuations, dtype=float))

    @property
    def total_budget(self) -> float:
        return float(self.budget_vector.sum())

    def with_budgets(self, budgets: Iterable[float]) -> "MarketInstance":
        """Return a validated copy with new budgets"""
        data = self.model_dump()
        data["budgets"] = [float(b) for b in budgets]
        return MarketInstance(**data)

    def normalized_budgets(self) -> "MarketInstance":
        """Return a copy whose budgets sum to one"""
        return self.with_budgets(self.budget_vector / self.total_budget)

    def to_document(self) -> Dict[str, Any]:
        """JSON document with the fixed field names"""
        document: Dict[str, Any] = {
            "label": self.label,
            "budgets": list(self.budgets),
            "valuations": [list(row) for row in self.valuations],
        }
        if self.raw_capacities is not None:
            document["raw_capacities"] = list(self.raw_capacities)
        if self.provenance:
            document["provenance"] = dict(self.provenance)
        return document

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "MarketInstance":
        return cls.model_validate(document)

    def __repr__(self):
        return f"<MarketInstance(label={self.label!r}, N={self.n_services}, M={self.n_ens})>"


class SolverMethod(str, Enum):
    """Tag recording which algorithm produced a solution"""

    EG = "eg"
    EG_PROJECTED_GRADIENT = "eg_projected_gradient"
    PROPDYN = "propdyn"
    CES = "ces"
    PROPBR = "propbr"
    NETPROFIT = "netprofit"


class EquilibriumSolution(BaseModel):
    """Allocation, prices and per-service utilities produced by a solver"""

    allocation: List[List[float]] = Field(description="x_ij, one row per service")
    prices: List[float] = Field(description="p_j, one entry per EN")
    utilities: List[float] = Field(description="u_i including surplus money")
    surpluses: List[float] = Field(description="Unspent money s_i (zero in the basic model)")
    iterations: int = Field(0, ge=0)
    converged: bool = True
    method: SolverMethod = SolverMethod.EG

    @model_validator(mode="after")
    def validate_shapes(self):
        """Check vector lengths and surplus signs."""
        n = len(self.allocation)
        m = len(self.prices)
        if any(len(row) != m for row in self.allocation):
            raise ValueError("allocation rows must have one entry per price")
        if len(self.utilities) != n or len(self.surpluses) != n:
            raise ValueError("utilities and surpluses need one entry per service")
        if any(s < -TOL_NUM for s in self.surpluses):
            raise ValueError("surpluses must be non-negative")
        return self

    @classmethod
    def from_arrays(
        cls,
        instance: MarketInstance,
        allocation: Allocation,
        prices: PriceVector,
        surpluses: Optional[NDArray[np.float64]] = None,
        iterations: int = 0,
        converged: bool = True,
        method: SolverMethod = SolverMethod.EG,
    ) -> "EquilibriumSolution":
        """Build a solution, deriving utilities u_i = sum_j a_ij x_ij + s_i"""
        x = check_allocation(instance, allocation, require_feasible=False)
        p = check_prices(instance, prices)
        s = np.zeros(instance.n_services) if surpluses is None else np.asarray(surpluses, dtype=float)
        s = np.maximum(s, 0.0)
        u = (instance.valuation_matrix * x).sum(axis=1) + s
        return cls(
            allocation=x.tolist(),
            prices=p.tolist(),
            utilities=u.tolist(),
            surpluses=s.tolist(),
            iterations=iterations,
            converged=converged,
            method=method,
        )

    @property
    def x(self) -> Allocation:
        return np.asarray(self.allocation, dtype=float)

    @property
    def p(self) -> PriceVector:
        return np.asarray(self.prices, dtype=float)

    @property
    def u(self) -> NDArray[np.float64]:
        return np.asarray(self.utilities, dtype=float)

    @property
    def s(self) -> NDArray[np.float64]:
        return np.asarray(self.surpluses, dtype=float)

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


class CertificateReport(BaseModel):
    """Optimality residuals of a candidate equilibrium"""

    max_kkt_residual: float = Field(ge=0, description="Largest complementarity residual")
    duality_gap: float = Field(description="Adjusted dual value minus primal value")
    clearing_slack: float = Field(ge=0, description="max_j |1 - sum_i x_ij|")
    budget_slack: float = Field(ge=0, description="max_i |sum_j p_j x_ij + s_i - B_i|")
    mbb_violation: float = Field(ge=0, description="max relative excess of a_ij B_i/u_i over p_j")
    primal_objective: Optional[float] = Field(None, exclude=True)

    RESIDUAL_FIELDS: ClassVar[tuple[str, ...]] = ("max_kkt_residual", "clearing_slack", "budget_slack", "mbb_violation")

    def worst(self, fields: Iterable[str] = RESIDUAL_FIELDS) -> float:
        """Largest of the selected residual fields"""
        return max(getattr(self, name) for name in fields)

    def relative_gap(self) -> float:
        scale = max(1.0, abs(self.primal_objective)) if self.primal_objective is not None else 1.0
        return self.duality_gap / scale


def check_allocation(
    instance: MarketInstance, allocation: Any, require_feasible: bool = True
) -> Allocation:
    """
    Convert to an N x M float array and check its invariants

    Args:
        instance: Market the allocation belongs to
        allocation: Matrix-like x_ij
        require_feasible: Also check x >= 0 and column sums <= 1 + tol_feas

    Returns:
        The allocation as a numpy array
    """
    x = np.asarray(allocation, dtype=float)
    if x.shape != instance.shape:
        raise DimensionError(f"allocation shape {x.shape} does not match market {instance.shape}")
    if require_feasible:
        if (x < -TOL_FEAS).any():
            raise ValueError("allocation has negative entries")
        if (x.sum(axis=0) > 1 + TOL_FEAS).any():
            raise ValueError("allocation over-subscribes some EN")
    return x


def check_prices(instance: MarketInstance, prices: Any) -> PriceVector:
    """Convert to a length-M float array, raising DimensionError on mismatch"""
    p = np.asarray(prices, dtype=float)
    if p.shape != (instance.n_ens,):
        raise DimensionError(f"price vector shape {p.shape} does not match M={instance.n_ens}")
    return p
