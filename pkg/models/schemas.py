import json
import logging
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from models.errors import ConfigError

logger = logging.getLogger(__name__)


class RadioConfig(BaseModel):
    """Radio parameters feeding the SNR-state probabilities"""
    model_config = ConfigDict(extra="forbid")

    ul_power: float = Field(..., gt=0, description="Total UE transmit power in watts")
    dl_power: float = Field(..., gt=0, description="Total BS transmit power in watts")
    ul_noise_density: float = Field(..., description="Uplink noise density in dB/Hz")
    dl_noise_density: float = Field(..., description="Downlink noise density in dB/Hz")
    rb_bandwidth: float = Field(180e3, gt=0, description="Resource block bandwidth in Hz")
    rb_count: int = Field(1, ge=1, description="Resource blocks the total power is split over")
    pathloss_exponent: float = Field(3.76, gt=0, description="Distance exponent beta")
    pathloss_offset_db: float = Field(0.0, description="Extra pathloss in dB at the reference distance")
    reference_distance: float = Field(1.0, gt=0, description="Reference distance in meters")
    ul_thresholds: List[float] = Field(..., min_length=1, description="Uplink SNR thresholds in dB, best state first")
    dl_thresholds: List[float] = Field(..., min_length=1, description="Downlink SNR thresholds in dB, best state first")


class GeometryConfig(BaseModel):
    """UE placement, either one symmetric distance or per-UE distances"""
    model_config = ConfigDict(extra="forbid")

    distance: Optional[float] = Field(None, gt=0, description="Common UE-to-BS distance in meters")
    source_distance: Optional[float] = Field(None, gt=0, description="UE_s to BS distance")
    uplink_distance: Optional[float] = Field(None, gt=0, description="UE_u to BS distance")
    destination_distance: Optional[float] = Field(None, gt=0, description="BS to UE_d distance")
    flow_distances: Optional[List[Tuple[float, float]]] = Field(
        None, description="Per UE2UE flow (source, destination) distances"
    )
    ue2bs_distances: Optional[List[float]] = Field(None, description="Per UE2BS flow distances")

    @model_validator(mode="after")
    def _check_complete(self):
        per_ue = (self.source_distance, self.uplink_distance, self.destination_distance)
        if self.distance is None and None in per_ue and self.flow_distances is None:
            raise ValueError("give either 'distance' or all per-UE distances")
        return self

    def ss_distances(self) -> Tuple[float, float, float]:
        """Distances of UE_s, UE_u and UE_d"""
        d = self.distance
        return (
            self.source_distance or d,
            self.uplink_distance or d,
            self.destination_distance or d,
        )

    @property
    def symmetric(self) -> bool:
        return self.distance is not None and self.flow_distances is None and self.ue2bs_distances is None


class RatesConfig(BaseModel):
    """Bit rates of the link-adaptation model"""
    model_config = ConfigDict(extra="forbid")

    r1: float = Field(..., gt=0, description="Highest bit rate")
    r2: float = Field(0.0, ge=0, description="Second bit rate, 0 for the two-rate model")
    k: int = Field(1, ge=1, description="Integer ratio r1 / r2")
    unit: str = Field("kbps/RB", description="Unit label carried into reports")

    @model_validator(mode="after")
    def _check_ratio(self):
        if self.r2 > 0 and abs(self.r1 - self.k * self.r2) > 1e-9 * self.r1:
            raise ValueError(f"r1={self.r1} must equal k*r2={self.k * self.r2}")
        return self


class ScenarioConfig(BaseModel):
    """Which system is analysed"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ss", "mu"] = Field(..., description="3-UE scenario or multi-user scenario")
    K: int = Field(0, ge=0, description="Number of UE2UE communications (mu)")
    U: int = Field(0, ge=0, description="Number of UE2BS communications (mu)")

    @model_validator(mode="after")
    def _check_counts(self):
        if self.kind == "mu" and self.K + self.U < 1:
            raise ValueError("a multi-user scenario needs K+U >= 1")
        return self


class SweepConfig(BaseModel):
    """Resolution, precision and budget knobs"""
    model_config = ConfigDict(extra="forbid")

    grid: int = Field(9, ge=2, description="Grid points per alpha dimension")
    epsilon: Optional[float] = Field(None, gt=0, description="Precision of the multi-user approximation")
    epsilons: List[float] = Field(default_factory=lambda: [1e-3, 1e-2, 1e-1], description="Precisions for the K0 profile")
    distances: List[float] = Field(default_factory=list, description="Distances for the K0 profile")
    budget: float = Field(1e7, gt=0, description="Maximum policy x alpha evaluations")
    policies: Optional[List[int]] = Field(None, description="Subset of 3-UE policies, all six when absent")
    horizon: int = Field(1_000_000, ge=1, description="Simulated slots")
    seeds: List[int] = Field(default_factory=lambda: [0], description="Replication seeds")


class SimulationConfig(BaseModel):
    """Slot-level simulation request"""
    model_config = ConfigDict(extra="forbid")

    policy: int = Field(1, ge=1, le=6, description="3-UE policy id")
    order: Optional[List[int]] = Field(None, description="Multi-user priority order")
    alpha: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0], description="Fraction vector")
    arrival_mode: Literal["saturated", "bernoulli"] = Field("saturated", description="Source traffic model")
    arrival_rates: List[float] = Field(default_factory=list, description="Mean arrival rate per source queue")
    coupling: Literal["relayed", "full_buffer", "both"] = Field("relayed", description="Relay queue model")
    warmup_fraction: float = Field(0.1, ge=0, lt=1, description="Discarded leading fraction of slots")
    slope_threshold: float = Field(1e-3, gt=0, description="Backlog slope threshold in units per slot")
    load_scales: List[float] = Field(default_factory=list, description="Scales of the analytic vertex to load the queues at")
    expect: Dict[str, Literal["stable", "unstable"]] = Field(
        default_factory=dict, description="Expected verdict per load scale"
    )
    trace: bool = Field(False, description="Write the backlog time series")
    trace_every: int = Field(1000, ge=1, description="Slots between time-series samples")


class OutputConfig(BaseModel):
    """Where results go"""
    model_config = ConfigDict(extra="forbid")

    directory: str = Field("results", description="Output directory")
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"], description="Emitted formats")


class ScenarioDoc(BaseModel):
    """Complete scenario document"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1, description="Scenario name used in output file names")
    radio: RadioConfig
    geometry: GeometryConfig
    rates: RatesConfig
    scenario: ScenarioConfig
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    simulation: Optional[SimulationConfig] = None
    outputs: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.scenario.kind == "ss" and self.rates.r2 <= 0:
            raise ValueError("the 3-UE scenario needs r2 > 0")
        return self


class VertexRecord(BaseModel):
    """One generator of a region with its provenance"""
    policy: str = Field(..., description="Generating policy label")
    alpha: List[float] = Field(..., description="Generating fraction vector")
    mu: List[float] = Field(..., description="Service-rate point")


class RegionSummary(BaseModel):
    """Machine-readable summary of a region computation"""
    name: str
    mode: str
    vertex_count: int
    policies_evaluated: int
    points_evaluated: int
    points_skipped: int = 0
    k0: Optional[int] = None
    average_service_rate: Optional[float] = None
    wall_time: float
    unit: str


class SandwichReport(BaseModel):
    """Outcome of the two-sided containment check"""
    epsilon_bound: float = Field(..., description="Largest predicted relative gap over the candidates and grid")
    measured_gap: float = Field(..., description="Largest relative gap of either rate over evaluated points")
    outer_violation: float = Field(..., description="Largest distance of a dominated exact point outside the approximation")
    inner_violation: float = Field(..., description="Largest distance of a shrunk approximate vertex outside the exact region")
    reversed_points: int = Field(0, description="Points where the approximation undercuts an exact rate")
    tolerance: float
    gap_tolerance: float = Field(1e-6, description="Allowed excess of the measured gap over the bound")

    @property
    def outer_holds(self) -> bool:
        return self.outer_violation <= self.tolerance

    @property
    def inner_holds(self) -> bool:
        return self.inner_violation <= self.tolerance

    @property
    def bound_holds(self) -> bool:
        return self.measured_gap <= self.epsilon_bound + self.gap_tolerance


class SimSummary(BaseModel):
    """Per-run simulation summary"""
    seed: int
    coupling: str
    empirical_mu: List[float]
    pi0_empirical: List[float]
    stability_verdicts: List[bool]
    final_backlogs: List[int]


def load_scenario(path: str) -> ScenarioDoc:
    """
    Load and validate a scenario document

    Args:
        path: JSON file path

    Returns:
        Validated ScenarioDoc
    """
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read scenario {path}: {e}") from e

    try:
        doc = ScenarioDoc.model_validate(raw)
    except ValidationError as e:
        locations = [".".join(str(p) for p in err["loc"]) for err in e.errors()]
        lines = [f"{loc}: {err['msg']}" for loc, err in zip(locations, e.errors())]
        raise ConfigError(f"Invalid scenario {path}:\n" + "\n".join(lines), locations) from e

    logger.info(f"Loaded scenario '{doc.name}' ({doc.scenario.kind}) from {path}")
    return doc
