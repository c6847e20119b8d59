"""`verify`: solve, simulate, and compare the two."""

import logging
import math
from pathlib import Path

from app.commands import output
from app.commands.simulate import simulate_profile, write_estimate
from app.commands.solve import solver_context
from app.core.errors import ConfigError, NullEventError, VerificationFailed
from app.models.market import MarketParams, ThresholdProfile
from app.models.run_config import RunConfig
from app.models.simulation import CheckResult, Deviation, SimEstimate, VerifyReport
from app.models.state import Likelihood, SteadyState
from app.services import simulator
from app.services.age_posterior import age_density_given_n, posterior_age
from app.services.distributions import ServiceModel, build_service_model, require_imrl
from app.services.equilibrium import solve_equilibrium, verify_best_response
from app.services.steady_state import ANALYTIC_N_MAX
from app.services.utility import g_value, type2_margin

logger = logging.getLogger(__name__)

PI_SE = 3.0
UTILITY_SE = 3.0
AGE_L1 = 0.05
DEVIATION_STEP = 0.5
# Fewer marginal waiters than this and the threshold check is skipped
MIN_MARGINAL = 30


def default_deviations(profile: ThresholdProfile) -> list[Deviation]:
    """Each finite positive threshold moved by ±0.5."""
    out = []
    for kind, values in (("S", profile.S), ("T", profile.T)):
        for i, value in enumerate(values, start=1):
            if math.isfinite(value) and value > 0:
                out.append(Deviation(coordinate=f"{kind}{i}", value=value + DEVIATION_STEP))
                out.append(Deviation(coordinate=f"{kind}{i}", value=max(value - DEVIATION_STEP, 0.0)))
    return out


def pi_checks(steady: SteadyState, estimate: SimEstimate) -> list[CheckResult]:
    checks = []
    for n, (analytic, empirical) in enumerate(zip(steady.pi_n, estimate.pi_hat)):
        se = empirical.se if math.isfinite(empirical.se) and empirical.se > 0 else 1e-3
        gap = abs(empirical.mean - float(analytic))
        checks.append(CheckResult(
            name=f"pi_{n}",
            passed=gap <= PI_SE * se,
            value=gap,
            tolerance=PI_SE * se,
            detail=f"analytic={output.fmt(float(analytic))} empirical={output.fmt(empirical.mean)}",
        ))
    return checks


def age_checks(steady: SteadyState, estimate: SimEstimate) -> list[CheckResult]:
    checks = []
    for n in (1, 2):
        if n > steady.n_max or n not in estimate.age_histograms:
            continue
        hist = estimate.age_histograms[n]
        if hist.low_count:
            checks.append(CheckResult(name=f"age_given_n{n}", passed=True, value=0.0, tolerance=AGE_L1,
                                      detail=f"skipped: {hist.count} arrivals"))
            continue
        prior = age_density_given_n(n, steady)
        distance = simulator.histogram_l1(hist, prior.points, prior.values)
        checks.append(CheckResult(name=f"age_given_n{n}", passed=distance <= AGE_L1, value=distance, tolerance=AGE_L1))
    return checks


def threshold_target(
    label: str,
    steady: SteadyState,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
) -> float:
    """
    Analytic utility of a waiter still present at the threshold `label`.

    The simulator records the realized margin of every waiter reaching its
    own deadline, so type II targets use the survival likelihood.

    Raises:
        NullEventError: nobody is still waiting at the threshold
    """
    kind, n = label[0], int(label[1:])
    if kind == "T":
        return g_value(params, model, n, profile.t(n))
    posterior = posterior_age(n, profile.s(n), steady, profile, params, model, Likelihood.SURVIVAL)
    return type2_margin(params, model, n, posterior)


def threshold_checks(
    estimate: SimEstimate,
    steady: SteadyState,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
) -> list[CheckResult]:
    checks = []
    for label, e in estimate.utility_at_threshold.items():
        if e.count < MIN_MARGINAL or not math.isfinite(e.se):
            checks.append(CheckResult(name=f"utility_at_{label}", passed=True, value=e.mean, tolerance=math.nan,
                                      detail=f"skipped: {e.count} marginal waiters"))
            continue
        try:
            target = threshold_target(label, steady, profile, params, model)
        except NullEventError as e_null:
            checks.append(CheckResult(name=f"utility_at_{label}", passed=True, value=e.mean, tolerance=math.nan,
                                      detail=f"skipped: {e_null}"))
            continue
        gap = abs(e.mean - target)
        checks.append(CheckResult(
            name=f"utility_at_{label}",
            passed=gap <= UTILITY_SE * e.se,
            value=gap,
            tolerance=UTILITY_SE * e.se,
            detail=f"analytic={output.fmt(target)} empirical={output.fmt(e.mean)}",
        ))
    return checks


def cmd_verify(
    run: RunConfig,
    out: str | Path | None = None,
    seed: int | None = None,
    horizon: int | None = None,
    replications: int | None = None,
) -> int:
    """
    Cross-validate the analytic solution against simulation.

    Raises:
        VerificationFailed: any check fails (after the report is written)
    """
    directory = output.out_dir(out or run.output.directory)
    model = build_service_model(run.model)
    require_imrl(model)
    context = solver_context(run)

    profile = run.resolve_profile()
    if profile is None:
        profile = solve_equilibrium(run.market, model, context=context)
    if profile.simulation_required or profile.n_max > ANALYTIC_N_MAX:
        raise ConfigError(f"verify needs an analytic profile with n_max <= {ANALYTIC_N_MAX}: {profile.summary()}")
    print(output.profile_table(profile))
    steady = context.steady(profile, run.market, model)

    estimate = simulate_profile(run, model, profile, seed, horizon, replications)
    write_estimate(directory, estimate)

    report = VerifyReport(profile=profile)
    report.checks += pi_checks(steady, estimate)
    report.checks += age_checks(steady, estimate)
    report.checks += threshold_checks(estimate, steady, profile, run.market, model)

    deviations = default_deviations(profile) if run.deviations is None else run.deviations
    if deviations:
        responses = verify_best_response(
            profile, run.market, model,
            sim_budget=horizon or run.simulation.horizon_events,
            deviations=deviations,
            seed=(seed if seed is not None else run.simulation.seed) + 1,
            replications=replications or run.simulation.replications,
            tag_rate=run.simulation.tag_rate,
        )
        for result in responses.results:
            report.checks.append(CheckResult(
                name=f"deviation_{result.deviation.label()}",
                passed=not result.improves,
                value=result.gain,
                tolerance=2.0 * result.gain_se,
            ))

    output.write_json(directory / "verify_report.json", report)
    print(output.checks_table(report.checks))
    if not report.passed:
        names = ", ".join(c.name for c in report.failures)
        raise VerificationFailed(f"verification failed: {names}")
    logger.info(f"All {len(report.checks)} checks passed")
    return 0
