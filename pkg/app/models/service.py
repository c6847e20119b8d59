"""Service-time distribution specs as they appear in run configs."""

from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, model_validator


class ExponentialSpec(BaseModel):
    kind: Literal["exponential"] = "exponential"
    rate: float = Field(gt=0)


class HyperexponentialSpec(BaseModel):
    kind: Literal["hyperexponential"] = "hyperexponential"
    probs: list[float] = Field(min_length=1)
    rates: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def check_phases(self) -> "HyperexponentialSpec":
        if len(self.probs) != len(self.rates):
            raise ValueError("probs and rates must have the same length")
        if any(p <= 0 for p in self.probs) or any(r <= 0 for r in self.rates):
            raise ValueError("phase probabilities and rates must be positive")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("phase probabilities must sum to 1")
        return self


class ParetoSpec(BaseModel):
    kind: Literal["pareto"] = "pareto"
    shape: float = Field(gt=1)
    scale: float = Field(gt=0)


class UniformSpec(BaseModel):
    kind: Literal["uniform"] = "uniform"
    lo: float = Field(default=0.0, ge=0)
    hi: float = Field(gt=0)


class MixtureSpec(BaseModel):
    kind: Literal["mixture"] = "mixture"
    components: list["ServiceModelSpec"] = Field(min_length=1)
    weights: list[float] = Field(min_length=1)


ServiceModelSpec = Annotated[
    Union[ExponentialSpec, HyperexponentialSpec, ParetoSpec, UniformSpec, MixtureSpec],
    Field(discriminator="kind"),
]

MixtureSpec.model_rebuild()
