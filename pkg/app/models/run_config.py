"""JSON run configuration shared by every CLI command."""

import json
import logging
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core import config
from app.core.errors import ConfigError
from app.models.market import MarketParams, ThresholdProfile
from app.models.service import ServiceModelSpec
from app.models.simulation import Deviation
from app.models.state import Likelihood, Tolerance

logger = logging.getLogger(__name__)


class SolveOptions(BaseModel):
    eps_root: float = Field(default=config.EPS_ROOT, gt=0)
    eps_quad: float = Field(default=config.EPS_QUAD, gt=0)
    eps_mass: float = Field(default=config.EPS_MASS, gt=0)
    grid_points: int = Field(default=config.GRID_POINTS, ge=20)
    likelihood: Likelihood = Likelihood.INSPECTOR
    # Skip the occupancy search and solve this n_max directly
    n_max: int | None = Field(default=None, ge=1)

    def tolerance(self) -> Tolerance:
        return Tolerance(eps_root=self.eps_root, eps_quad=self.eps_quad, eps_mass=self.eps_mass)


class SimulationOptions(BaseModel):
    horizon_events: int = Field(default=config.SIM_HORIZON, gt=0)
    warmup_events: int | None = Field(default=None, ge=0)
    seed: int = 0
    replications: int = Field(default=1, ge=1)
    tag_rate: float = Field(default=config.TAG_RATE, gt=0, le=1)
    age_bins: int = Field(default=50, ge=2)
    age_range: float | None = Field(default=None, gt=0)
    trace_path: str | None = None


class OutputOptions(BaseModel):
    directory: str = "results"
    curves: bool = False


class RunConfig(BaseModel):
    """Everything a command needs: service model, market and per-command options."""
    model_config = ConfigDict(protected_namespaces=())

    model: ServiceModelSpec
    market: MarketParams
    solve: SolveOptions = Field(default_factory=SolveOptions)
    simulation: SimulationOptions = Field(default_factory=SimulationOptions)
    # None means the default ±step set around every finite threshold
    deviations: list[Deviation] | None = None
    profile: ThresholdProfile | None = None
    profile_path: str | None = None
    output: OutputOptions = Field(default_factory=OutputOptions)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """
        Read and validate a JSON config file.

        Raises:
            ConfigError: missing file, malformed JSON or failed validation
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config not found: {path}")
        try:
            run = cls.model_validate(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {path}: {e}") from e
        except ValidationError as e:
            raise ConfigError(f"invalid config {path}: {e}") from e
        logger.info(f"Loaded config {path}: model={run.model.kind} lambda={run.market.lam} V={run.market.V} C={run.market.C}")
        return run

    def resolve_profile(self) -> ThresholdProfile | None:
        """The inline profile, or the one stored at `profile_path`."""
        if self.profile is not None:
            return self.profile
        if self.profile_path is None:
            return None
        return load_profile(self.profile_path)


def load_profile(path: str | Path) -> ThresholdProfile:
    """Read a profile.json written by `solve`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"profile not found: {path}")
    try:
        return ThresholdProfile.model_validate(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"bad profile file {path}: {e}") from e
