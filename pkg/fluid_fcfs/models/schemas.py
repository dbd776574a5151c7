"""
Pydantic documents for every file the package reads or writes
"""
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class RateMode(str, Enum):
    """How service rates are indexed"""
    SD = "SD"
    CD = "CD"
    GENERAL = "GENERAL"


class VerdictKind(str, Enum):
    """Resource pooling outcome"""
    COMPLETE = "COMPLETE"
    WEAK = "WEAK"
    VIOLATED = "VIOLATED"


class LawFamily(str, Enum):
    """Service-time distribution families with mean 1/rate"""
    EXPONENTIAL = "exponential"
    PARETO = "pareto"
    UNIFORM_WIDE = "uniform-wide"
    UNIFORM_NARROW = "uniform-narrow"


class FluidEventKind(str, Enum):
    MERGE = "merge"
    SPLIT = "split"
    INSTANT_MERGE = "instant_merge"
    FRONTIER_CONTACT = "frontier_contact"
    FRONTIER_RELEASE = "frontier_release"


# Configuration document
class CustomerEntry(BaseModel):
    name: str = Field(..., min_length=1, description="Customer type identifier")
    alpha: float = Field(..., description="Probability that an arrival is of this type")

    model_config = ConfigDict(extra="forbid")


class RatesDocument(BaseModel):
    mode: RateMode
    per_server: Optional[Dict[str, float]] = Field(None, description="SD rates keyed by server")
    per_customer: Optional[Dict[str, float]] = Field(None, description="CD rates keyed by customer type")
    per_edge: Optional[List[Tuple[str, str, float]]] = Field(None, description="GENERAL rates as (server, customer, rate)")

    model_config = ConfigDict(extra="forbid")


class SpecDocument(BaseModel):
    servers: List[str] = Field(..., min_length=1)
    customers: List[CustomerEntry] = Field(..., min_length=1)
    edges: List[Tuple[str, str]] = Field(..., min_length=1)
    rates: RatesDocument
    arrival_rate: Optional[float] = Field(None, alias="lambda", description="Arrival rate, customers per unit time")

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# Pooling
class VerdictDocument(BaseModel):
    kind: VerdictKind
    witnesses: List[List[str]] = Field(default_factory=list)
    condition: str = Field(..., description="Which pooling condition was checked: sd, cd or tree")
    pooled_rate: Optional[float] = None
    eta: Optional[List["EdgeValue"]] = None


class DecompositionBlockDocument(BaseModel):
    servers: List[str]
    customers: List[str]
    rate: float = Field(..., description="Pooled service rate of the block")
    critical_rate: float = Field(..., description="Arrival rate at which the block saturates")


class DecompositionDocument(BaseModel):
    method: str
    blocks: List[DecompositionBlockDocument]


class StabilityDocument(BaseModel):
    stable: bool
    arrival_rate: float
    pooled_rate: float
    merge_time: Optional[float] = None
    drain_time: Optional[float] = None


class AnalysisDocument(BaseModel):
    verdict: VerdictDocument
    decomposition: Optional[DecompositionDocument] = None
    decomposition_error: Optional[str] = None
    stability: Optional[StabilityDocument] = None
    max_throughput: float


# Static planning LP
class EdgeValue(BaseModel):
    server: str
    customer: str
    value: float


class DualsDocument(BaseModel):
    y: Dict[str, float] = Field(..., description="Server row prices")
    z: Dict[str, float] = Field(..., description="Customer row prices")
    x: List[EdgeValue] = Field(..., description="Reduced cost per edge")


class LpSolutionDocument(BaseModel):
    status: str = "OPTIMAL"
    mu_star: float
    eta: List[EdgeValue]
    theta: Dict[str, float]
    duals: DualsDocument
    basic_arcs: List[Tuple[str, str]]
    iterations: int = Field(..., ge=0)


class DesignBlockDocument(BaseModel):
    servers: List[str]
    customers: List[str]
    tree_edges: List[Tuple[str, str]]
    rate: float
    matching_rates: List[EdgeValue]
    pooling_kind: VerdictKind
    zero_basic_arcs: List[Tuple[str, str]] = Field(default_factory=list)


class OptimalDesignDocument(BaseModel):
    blocks: List[DesignBlockDocument]
    disconnected_peel: bool = False


# Fluid model
class GroupDocument(BaseModel):
    servers: List[str]
    position: float = Field(..., description="Group position at the segment start")
    speed: float
    arrival_constrained: bool = False


class SegmentDocument(BaseModel):
    start: float
    end: Optional[float] = Field(None, description="None for a final segment that never ends")
    groups: List[GroupDocument]


class FluidEventDocument(BaseModel):
    time: float
    kind: FluidEventKind
    servers: List[str]


class TrajectoryDocument(BaseModel):
    arrival_rate: Optional[float]
    horizon: Optional[float] = Field(None, description="None for an unbounded trace")
    steady: bool = Field(..., description="True when the final partition can no longer change")
    breakpoints: List[float]
    segments: List[SegmentDocument]
    events: List[FluidEventDocument]


# Simulation
class SimulationMeta(BaseModel):
    law: LawFamily
    warmup_services: int
    measured_services: int
    replications: int
    seed_base: int
    infinite_supply: bool
    sampling_epoch: str = "service completion, state before reassignment"


class SimEstimateDocument(BaseModel):
    servers: List[str]
    customers: List[str]
    edges: List[Tuple[str, str]]
    r_hat: List[List[float]] = Field(..., description="Rows are customer types, columns are servers")
    span_histogram: List[Tuple[int, int]]
    permutation_frequencies: Dict[str, float]
    meta: SimulationMeta


class ReplicationVectorsDocument(BaseModel):
    system: str = ""
    law: LawFamily
    edges: List[Tuple[str, str]]
    matching_vectors: List[List[float]]
    permutation_labels: List[str] = Field(default_factory=list)
    permutation_vectors: List[List[float]] = Field(default_factory=list)


# Statistics
class HotellingReportDocument(BaseModel):
    system: str = ""
    law: str = ""
    target: str = "matching"
    t_squared: float = Field(..., ge=0)
    f_statistic: float = Field(..., ge=0)
    df1: int
    df2: int
    p_value: float = Field(..., ge=0, le=1)
    n: int
    dimension: int
    omitted_coordinate: str = "last"


class HotellingReportTable(BaseModel):
    reports: List[HotellingReportDocument]


class PermutationRow(BaseModel):
    ordering: str
    probability: float


class PermutationTableDocument(BaseModel):
    rows: List[PermutationRow]


# Fixtures
class MatchingRateFixture(BaseModel):
    system: str
    provenance: str
    servers: List[str]
    customers: List[str]
    theoretical: List[List[float]]
    estimates: Dict[LawFamily, List[List[float]]] = Field(default_factory=dict)


class PValueFixture(BaseModel):
    provenance: str
    below_floor: str = "<1e-15"
    systems: Dict[str, Dict[LawFamily, Optional[float]]] = Field(
        ..., description="p-value per system and law; null marks a value below the floor"
    )


class PermutationFixture(BaseModel):
    system: str
    provenance: str
    theoretical: Dict[str, float]
    empirical: Dict[LawFamily, Dict[str, float]] = Field(default_factory=dict)


# Run bookkeeping
class RunManifest(BaseModel):
    command: str
    spec_path: Optional[str] = None
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seeds: List[int] = Field(default_factory=list)
    tool_version: str
    outputs: List[str] = Field(default_factory=list)
    started_at: datetime
    wall_clock_seconds: float = Field(..., ge=0)


VerdictDocument.model_rebuild()


EXPORTED_SCHEMAS = {
    "spec": SpecDocument,
    "verdict": VerdictDocument,
    "decomposition": DecompositionDocument,
    "analysis": AnalysisDocument,
    "stability": StabilityDocument,
    "lp_solution": LpSolutionDocument,
    "optimal_design": OptimalDesignDocument,
    "trajectory": TrajectoryDocument,
    "sim_estimate": SimEstimateDocument,
    "replication_vectors": ReplicationVectorsDocument,
    "test_report": HotellingReportTable,
    "permutation_table": PermutationTableDocument,
    "manifest": RunManifest,
}
