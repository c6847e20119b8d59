"""Simulation inputs, estimates and verification reports."""

import math
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core import config
from app.models.market import MarketParams, ThresholdProfile


class Deviation(BaseModel):
    """A single-coordinate deviation used by tagged customers, e.g. S1 -> 6.7."""
    coordinate: str = Field(pattern=r"^[ST][1-9][0-9]*$")
    value: float = Field(ge=0)

    @property
    def kind(self) -> str:
        return self.coordinate[0]

    @property
    def index(self) -> int:
        return int(self.coordinate[1:])

    def label(self) -> str:
        return f"{self.coordinate}={self.value:.6g}"


class SimConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, ser_json_inf_nan="constants")

    params: MarketParams
    # ServiceModel instance; not serialized
    model: Any = Field(exclude=True)
    profile: ThresholdProfile
    horizon_events: int = Field(default=config.SIM_HORIZON, gt=0)
    warmup_events: int | None = Field(default=None, ge=0)
    seed: int = 0
    tagged_deviation: Deviation | None = None
    tag_rate: float = Field(default=config.TAG_RATE, gt=0, le=1)
    age_bins: int = Field(default=50, ge=2)
    age_range: float | None = Field(default=None, gt=0)
    y_age_bins: int = Field(default=10, ge=1)
    trace_path: str | None = None

    @field_validator("profile")
    @classmethod
    def check_profile(cls, profile: ThresholdProfile) -> ThresholdProfile:
        if any(math.isnan(v) for v in profile.T + profile.S):
            raise ValueError("simulated profile must have every threshold set")
        return profile

    @model_validator(mode="after")
    def check_warmup(self) -> "SimConfig":
        if self.warmup_events is None:
            self.warmup_events = int(self.horizon_events * config.SIM_WARMUP_FRACTION)
        if not self.horizon_events > self.warmup_events:
            raise ValueError(f"horizon_events ({self.horizon_events}) must exceed warmup_events ({self.warmup_events})")
        return self


class Estimate(BaseModel):
    """Sample mean with a standard error (batch means where the sample allows)."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    mean: float
    se: float
    count: int

    def within(self, target: float, n_se: float) -> bool:
        return abs(self.mean - target) <= n_se * self.se


class Histogram(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    edges: list[float]
    density: list[float]
    count: int
    low_count: bool = False
    age_lo: float | None = None
    age_hi: float | None = None


class SimEstimate(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    pi_hat: list[Estimate]
    age_histograms: dict[int, Histogram] = Field(default_factory=dict)
    y_histograms: dict[str, Histogram] = Field(default_factory=dict)
    utility_at_threshold: dict[str, Estimate] = Field(default_factory=dict)
    tagged_payoff: Estimate | None = None
    baseline_payoff: Estimate | None = None
    event_counts: dict[str, int] = Field(default_factory=dict)
    replications: int = 1
    seeds: list[int] = Field(default_factory=list)


class DeviationResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    deviation: Deviation
    deviation_payoff: Estimate
    equilibrium_payoff: Estimate
    gain: float
    gain_se: float
    improves: bool


class BestResponseReport(BaseModel):
    profile: ThresholdProfile
    results: list[DeviationResult] = Field(default_factory=list)

    @property
    def improving(self) -> list[DeviationResult]:
        return [r for r in self.results if r.improves]


class CheckResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


class VerifyReport(BaseModel):
    profile: ThresholdProfile
    checks: list[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]


class TraceRecord(BaseModel):
    """One exported event: time, kind and the queue snapshot after it."""
    time: float
    event: str
    queue: list[str]
