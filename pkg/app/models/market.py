"""Market parameters and the equilibrium threshold profile."""

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MarketParams(BaseModel):
    """Arrival rate, service reward and linear waiting-cost rate."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(gt=0, alias="lambda")
    V: float = Field(gt=0)
    C: float = Field(gt=0)

    def scaled(self, factor: float) -> "MarketParams":
        """Reward and cost both multiplied by `factor`."""
        return MarketParams(lam=self.lam, V=self.V * factor, C=self.C * factor)


class ThresholdProfile(BaseModel):
    """
    Strategy profile: join iff fewer than n_max are present.

    T[n-1] is the patience of a type I waiter with n ahead, measured from
    the last service completion; S[n-1] is the patience of a type II waiter
    who found n in the system, measured from arrival. math.inf means the
    customer never abandons.
    """
    model_config = ConfigDict(ser_json_inf_nan="constants")

    n_max: int = Field(ge=1)
    T: list[float] = Field(default_factory=list)
    S: list[float] = Field(default_factory=list)
    simulation_required: bool = False
    diagnostics: dict[str, int | float | str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_lengths(self) -> "ThresholdProfile":
        if len(self.T) != max(self.n_max - 2, 0):
            raise ValueError(f"T must have n_max-2={max(self.n_max - 2, 0)} entries, got {len(self.T)}")
        if len(self.S) != self.n_max - 1:
            raise ValueError(f"S must have n_max-1={self.n_max - 1} entries, got {len(self.S)}")
        for value in self.T + self.S:
            if math.isnan(value):
                if not self.simulation_required:
                    raise ValueError("unsolved (nan) thresholds require simulation_required")
            elif value < 0:
                raise ValueError(f"thresholds must be non-negative, got {value}")
        return self

    def t(self, n: int) -> float:
        """Type I patience with n ahead; inf outside the sequence."""
        if 1 <= n <= len(self.T):
            return self.T[n - 1]
        return math.inf

    def s(self, n: int) -> float:
        """Type II patience for an arrival that found n present."""
        if 1 <= n <= len(self.S):
            return self.S[n - 1]
        return math.inf

    def with_s(self, n: int, value: float) -> "ThresholdProfile":
        S = list(self.S)
        S[n - 1] = value
        return self.model_copy(update={"S": S})

    def with_t(self, n: int, value: float) -> "ThresholdProfile":
        T = list(self.T)
        T[n - 1] = value
        return self.model_copy(update={"T": T})

    def is_monotone(self) -> bool:
        """Both sequences strictly decreasing over their finite entries."""
        for seq in (self.T, self.S):
            finite = [v for v in seq if math.isfinite(v)]
            if any(b >= a for a, b in zip(finite, finite[1:])):
                return False
        return True

    def summary(self) -> str:
        parts = [f"n_max={self.n_max}"]
        parts += [f"T{i}={v:.6g}" for i, v in enumerate(self.T, start=1)]
        parts += [f"S{i}={v:.6g}" for i, v in enumerate(self.S, start=1)]
        return " ".join(parts)


class SteadyStateSummary(BaseModel):
    """Scalar view of a solved steady state, written next to the age densities."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    n_max: int = Field(ge=1)
    pi0: float
    pi_n: list[float]
    p00: float
    p10: float
    total_mass: float
    structure_mass: dict[str, float] = Field(default_factory=dict)
    residuals: dict[str, float] = Field(default_factory=dict)
