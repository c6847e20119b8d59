"""`solve`: equilibrium profile plus optional utility and posterior curves."""

import logging
import math
from pathlib import Path

import numpy as np

from app.commands import output
from app.models.market import MarketParams, ThresholdProfile
from app.models.run_config import RunConfig
from app.models.state import CustomerType, SteadyState
from app.services.age_posterior import posterior_age
from app.services.distributions import ServiceModel, build_service_model, require_imrl
from app.services.equilibrium import SolverContext, solve_equilibrium
from app.services.utility import utility_curve

logger = logging.getLogger(__name__)

CURVE_POINTS = 50


def solver_context(run: RunConfig) -> SolverContext:
    return SolverContext(
        tol=run.solve.tolerance(),
        grid_points=run.solve.grid_points,
        mode=run.solve.likelihood,
        n_max=run.solve.n_max,
    )


def solve_profile(run: RunConfig) -> tuple[ServiceModel, ThresholdProfile, SolverContext]:
    model = build_service_model(run.model)
    require_imrl(model)
    context = solver_context(run)
    profile = solve_equilibrium(run.market, model, context=context)
    return model, profile, context


def _write_curves(
    directory: Path,
    params: MarketParams,
    model: ServiceModel,
    profile: ThresholdProfile,
    steady: SteadyState,
    context: SolverContext,
) -> None:
    t_hi = max([v for v in profile.T + profile.S if math.isfinite(v)] + [10.0 * model.mean])
    times = np.linspace(0.0, t_hi, CURVE_POINTS)
    type1 = {
        f"U{n}_type_i": utility_curve(params, model, n, CustomerType.TYPE_I, times).values.values
        for n in range(1, profile.n_max)
    }
    output.write_curves(directory / "utility_type_i.csv", "t", times, type1)

    for n in range(1, min(profile.n_max, 3)):
        s_n = profile.s(n)
        if not 0 < s_n:
            continue
        limit = s_n if math.isfinite(s_n) else t_hi
        curve = utility_curve(
            params, model, n, CustomerType.TYPE_II, np.linspace(0.0, limit, CURVE_POINTS),
            steady=steady, profile=profile, mode=context.mode,
        )
        output.write_curves(directory / f"utility_type_ii_n{n}.csv", "t", curve.values.points, {f"U{n}_type_ii": curve.values.values})

        waits = {"t0": 0.0, "t_half": 0.5 * limit, "t_end": limit}
        posteriors = {
            f"density_{name}": posterior_age(n, t, steady, profile, params, model, context.mode).density
            for name, t in waits.items()
        }
        output.write_curves(directory / f"posterior_n{n}.csv", "a", steady.ages, posteriors)


def cmd_solve(run: RunConfig, out: str | Path | None = None, curves: bool | None = None) -> int:
    """Solve, print the profile row, write profile.json and the steady state (CSV densities, JSON summary)."""
    directory = output.out_dir(out or run.output.directory)
    model, profile, context = solve_profile(run)
    print(output.profile_table(profile))
    output.write_json(directory / "profile.json", profile)

    stage = context.stages.get(profile.n_max)
    if stage is not None and not profile.simulation_required:
        output.write_steady_state(directory / "steady_state.csv", stage.steady)
        output.write_json(directory / "steady_state.json", output.steady_state_summary(stage.steady))
        if curves if curves is not None else run.output.curves:
            _write_curves(directory, run.market, model, profile, stage.steady, context)
    return 0
