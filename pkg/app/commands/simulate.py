"""`simulate`: run the event simulation under a given profile."""

import logging
from pathlib import Path

from app.commands import output
from app.core.errors import ConfigError
from app.models.market import ThresholdProfile
from app.models.run_config import RunConfig
from app.models.simulation import SimConfig, SimEstimate
from app.services import simulator
from app.services.distributions import ServiceModel, build_service_model

logger = logging.getLogger(__name__)


def sim_config(
    run: RunConfig,
    model: ServiceModel,
    profile: ThresholdProfile,
    seed: int | None = None,
    horizon: int | None = None,
) -> SimConfig:
    options = run.simulation
    horizon_events = horizon if horizon is not None else options.horizon_events
    if horizon_events <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon_events}")
    warmup = options.warmup_events
    if warmup is not None and warmup >= horizon_events:
        raise ConfigError(f"warmup ({warmup}) must be below the horizon ({horizon_events})")
    return SimConfig(
        params=run.market,
        model=model,
        profile=profile,
        horizon_events=horizon_events,
        warmup_events=warmup,
        seed=options.seed if seed is None else seed,
        tag_rate=options.tag_rate,
        age_bins=options.age_bins,
        age_range=options.age_range,
        trace_path=options.trace_path,
    )


def simulate_profile(
    run: RunConfig,
    model: ServiceModel,
    profile: ThresholdProfile,
    seed: int | None = None,
    horizon: int | None = None,
    replications: int | None = None,
) -> SimEstimate:
    if profile.simulation_required:
        raise ConfigError("profile has unsolved thresholds; set them before simulating")
    sim = sim_config(run, model, profile, seed, horizon)
    return simulator.replicate(sim, replications or run.simulation.replications)


def write_estimate(directory: Path, estimate: SimEstimate) -> None:
    output.write_json(directory / "sim_estimate.json", estimate)
    for n, hist in estimate.age_histograms.items():
        output.write_histogram(directory / f"age_given_n{n}.csv", hist)


def cmd_simulate(
    run: RunConfig,
    out: str | Path | None = None,
    seed: int | None = None,
    horizon: int | None = None,
    profile_path: str | None = None,
) -> int:
    """Simulate the configured (or given) profile; write sim_estimate.json and histograms."""
    directory = output.out_dir(out or run.output.directory)
    if profile_path is not None:
        run = run.model_copy(update={"profile": None, "profile_path": profile_path})
    profile = run.resolve_profile()
    if profile is None:
        raise ConfigError("simulate needs a profile: set `profile`, `profile_path` or --profile")
    model = build_service_model(run.model)
    estimate = simulate_profile(run, model, profile, seed, horizon)
    print(output.estimate_table(estimate))
    write_estimate(directory, estimate)
    return 0
