"""
Equilibrium pipeline: T-sequence, n_max, then the S-sequence by fixed point.

T_n only needs the service model. S_n and n_max depend on the steady state
the profile itself induces, so every S candidate re-solves the chain.
"""

import logging
import math
from dataclasses import dataclass, field

from app.core import config
from app.core.errors import BracketError, ConvergenceError, NullEventError
from app.models.market import MarketParams, ThresholdProfile
from app.models.simulation import BestResponseReport, Deviation, DeviationResult, SimConfig
from app.models.state import Likelihood, SteadyState, Tolerance
from app.services import numerics, simulator
from app.services.age_posterior import expected_residual, posterior_age, prior_posterior
from app.services.distributions import ServiceModel, require_imrl
from app.services.steady_state import ANALYTIC_N_MAX, solve_steady_state
from app.services.utility import g_value, type2_margin

logger = logging.getLogger(__name__)

MAX_BRACKET_DOUBLINGS = 60
# Doublings of an S candidate before declaring S_n infinite
MAX_S_DOUBLINGS = 8
MAX_BISECTIONS = 60
MAX_SWEEPS = 5
# Smallest S candidate, relative to the mean service time
S_FLOOR = 1e-6


@dataclass
class StageResult:
    """S-sequence and steady state under the hypothesis n_max = c."""
    n_max: int
    profile: ThresholdProfile
    steady: SteadyState
    balk_margin: float


@dataclass
class SolverContext:
    tol: Tolerance = field(default_factory=Tolerance)
    grid_points: int = config.GRID_POINTS
    mode: Likelihood = Likelihood.INSPECTOR
    max_sweeps: int = MAX_SWEEPS
    # Solve this occupancy directly instead of searching for it
    n_max: int | None = None
    stages: dict[int, StageResult] = field(default_factory=dict)
    steady_solves: int = 0

    def steady(self, profile: ThresholdProfile, params: MarketParams, model: ServiceModel) -> SteadyState:
        self.steady_solves += 1
        return solve_steady_state(profile, params, model, n_points=self.grid_points, tol=self.tol)


def coarse_n_max(params: MarketParams, model: ServiceModel) -> int:
    """⌊V/(C x̄)⌋ + 1: past this even a zero residual makes joining a loss."""
    return int(math.floor(params.V / (params.C * model.mean))) + 1


def solve_t_threshold(params: MarketParams, model: ServiceModel, n: int, tol: Tolerance | None = None) -> float:
    """
    Patience T_n of a type I waiter with n ahead: the zero of G_n.

    Returns math.inf when the limiting MRL never pushes G_n below zero and
    0 when G_n(0) <= 0.

    Raises:
        ModelContractError: the model is not IMRL
        BracketError: no sign change found while doubling the upper bracket
    """
    require_imrl(model)
    tol = tol or numerics.DEFAULT_TOLERANCE
    if n < 1:
        raise ValueError(f"T_n needs n >= 1, got {n}")
    level = params.V / params.C - (n - 1) * model.mean
    if model.mrl_limit <= level:
        return math.inf
    if g_value(params, model, n, 0.0) <= 0:
        return 0.0

    def g(t: float) -> float:
        return g_value(params, model, n, t)

    lo = model.support_start
    hi = 10.0 * max(model.mean, lo)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if g(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise BracketError(f"root not bracketed: G_{n} still positive at t={hi:.4g}")
    return numerics.find_root(g, lo, hi, tol=tol.eps_root)


def t_sequence(params: MarketParams, model: ServiceModel, n_max: int, tol: Tolerance | None = None) -> list[float]:
    return [solve_t_threshold(params, model, n, tol) for n in range(1, n_max - 1)]


def _profile_with(n_max: int, T: list[float], S: list[float]) -> ThresholdProfile:
    return ThresholdProfile(n_max=n_max, T=list(T), S=list(S))


def solve_s_threshold(
    params: MarketParams,
    model: ServiceModel,
    n: int,
    prior_S: list[float],
    T: list[float],
    tol: Tolerance | None = None,
    context: SolverContext | None = None,
    n_max: int | None = None,
    later_S: list[float] | None = None,
) -> float:
    """
    S_n: the wait at which a type II waiter who found n becomes indifferent.

    Each candidate s is plugged into the profile (S_1..S_{n-1} from
    `prior_S`, S_{n+1}.. from `later_S` or s itself when still unknown),
    the steady state is re-solved and the waiter's margin at t = s is
    read off the age posterior. A positive margin means the candidate is
    too impatient. The margin never exceeds G_n, so S_n <= T_n.

    Raises:
        ConvergenceError: bisection exceeds its iteration cap
    """
    context = context or SolverContext(tol=tol or Tolerance())
    tol = tol or context.tol
    n_max = n_max or len(T) + 2
    if not 1 <= n <= min(n_max - 1, ANALYTIC_N_MAX - 1):
        raise ValueError(f"analytic S_n needs 1 <= n <= {min(n_max - 1, ANALYTIC_N_MAX - 1)}, got {n}")

    def candidate_profile(s: float) -> ThresholdProfile:
        tail = list(later_S) if later_S else [s] * (n_max - 1 - n)
        return _profile_with(n_max, T, list(prior_S[: n - 1]) + [s] + tail)

    def margin(s: float) -> float:
        profile = candidate_profile(s)
        steady = context.steady(profile, params, model)
        posterior = posterior_age(n, s, steady, profile, params, model, context.mode)
        value = type2_margin(params, model, n, posterior)
        logger.debug(f"S{n} candidate {s:.6g}: margin {value:.6g}")
        return value

    lo = S_FLOOR * model.mean
    if margin(lo) <= 0:
        logger.info(f"S{n} = 0: joining with {n} present is never worth waiting")
        return 0.0

    t_n = solve_t_threshold(params, model, n, tol)
    hi = max(t_n, lo) if math.isfinite(t_n) else 10.0 * model.mean
    for _ in range(MAX_S_DOUBLINGS):
        try:
            if margin(hi) <= 0:
                break
        except NullEventError:
            # nobody is still waiting at hi: the margin stayed positive on every reachable wait
            logger.info(f"S{n} = inf: a wait of {hi:.4g} is never observed")
            return math.inf
        lo, hi = hi, 2.0 * hi
    else:
        logger.info(f"S{n} = inf: margin still positive at {hi:.4g}")
        return math.inf

    for _ in range(MAX_BISECTIONS):
        if hi - lo <= tol.eps_root:
            break
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            lo = mid
        else:
            hi = mid
    else:
        raise ConvergenceError(f"S fixed point did not converge: S{n} in [{lo:.6g}, {hi:.6g}]")
    return 0.5 * (lo + hi)


def _solve_stage(params: MarketParams, model: ServiceModel, c: int, context: SolverContext) -> StageResult:
    """Solve S_1..S_{c-1} under n_max = c by Gauss-Seidel sweeps."""
    T = t_sequence(params, model, c, context.tol)
    S: list[float] = []
    for n in range(1, c):
        S.append(solve_s_threshold(params, model, n, S, T, context.tol, context, n_max=c))
    sweeps = 0
    change = 0.0
    if c > 2:
        for sweeps in range(1, context.max_sweeps + 1):
            change = 0.0
            for n in range(1, c):
                value = solve_s_threshold(
                    params, model, n, S[: n - 1], T, context.tol, context, n_max=c, later_S=S[n:]
                )
                previous = S[n - 1]
                moved = 0.0 if value == previous else abs(value - previous)
                change = max(change, moved if math.isfinite(moved) else math.inf)
                S[n - 1] = value
            logger.info(f"Stage n_max={c} sweep {sweeps}: S={[round(s, 6) for s in S]} max change {change:.3g}")
            if change < context.tol.eps_root:
                break
        else:
            logger.warning(f"Stage n_max={c}: S-sequence still moving by {change:.3g} after {sweeps} sweeps")

    profile = _profile_with(c, T, S)
    steady = context.steady(profile, params, model)
    prior = prior_posterior(c, steady)
    balk_margin = params.V - params.C * (expected_residual(prior, 0.0, model) + (c - 1) * model.mean)
    profile = profile.model_copy(update={"diagnostics": {
        "sweeps": sweeps,
        "sweep_change": change,
        f"U{c}_at_arrival": balk_margin,
    }})
    logger.info(f"Stage n_max={c}: {profile.summary()}, utility of joining at N={c}: {balk_margin:.6g}")
    return StageResult(n_max=c, profile=profile, steady=steady, balk_margin=balk_margin)


def solve_n_max(params: MarketParams, model: ServiceModel, context: SolverContext | None = None) -> int:
    """
    Occupancy at which arrivals balk.

    Hypotheses n_max = 1, 2, 3 are tried in turn: under each, the profile
    is solved and an arrival finding c present checks its expected utility
    at t = 0 against the stage's steady state. The first non-positive
    utility fixes n_max = c. Returns ANALYTIC_N_MAX + 1 when even c = 3
    still joins; the bound ⌊V/(C x̄)⌋ + 1 caps every answer.
    """
    context = context or SolverContext()
    bound = coarse_n_max(params, model)
    for c in range(1, ANALYTIC_N_MAX + 1):
        if c >= bound:
            logger.info(f"n_max = {c}: reached the coarse bound {bound}")
            context.stages.setdefault(c, _solve_stage(params, model, c, context))
            return c
        stage = context.stages.get(c) or _solve_stage(params, model, c, context)
        context.stages[c] = stage
        if stage.balk_margin <= 0:
            logger.info(f"n_max = {c}: arrivals finding {c} expect {stage.balk_margin:.4g}")
            return c
    logger.warning(f"Arrivals finding {ANALYTIC_N_MAX} still join; n_max lies in [{ANALYTIC_N_MAX + 1}, {bound}]")
    return ANALYTIC_N_MAX + 1


def solve_equilibrium(
    params: MarketParams,
    model: ServiceModel,
    tol: Tolerance | None = None,
    context: SolverContext | None = None,
) -> ThresholdProfile:
    """
    Full pipeline. Beyond the analytic range the T-sequence and n_max are
    returned with nan S entries and `simulation_required` set. A context
    with `n_max` set skips the occupancy search and solves that stage.

    Raises:
        ModelContractError: the model is not IMRL
    """
    require_imrl(model)
    context = context or SolverContext(tol=tol or Tolerance())
    bound = coarse_n_max(params, model)
    if context.n_max is None:
        n_max = solve_n_max(params, model, context)
    else:
        n_max = context.n_max
        if n_max < 1:
            raise ValueError(f"n_max must be at least 1, got {n_max}")
        logger.info(f"n_max = {n_max}: set by the caller, occupancy search skipped")
        if n_max <= ANALYTIC_N_MAX and n_max not in context.stages:
            context.stages[n_max] = _solve_stage(params, model, n_max, context)
    source = "searched" if context.n_max is None else "forced"

    if n_max > ANALYTIC_N_MAX:
        T = t_sequence(params, model, n_max, context.tol)
        profile = ThresholdProfile(
            n_max=n_max,
            T=T,
            S=[math.nan] * (n_max - 1),
            simulation_required=True,
            diagnostics={
                "n_max_upper": bound,
                "n_max_source": source,
                "note": "S-sequence requires the simulator",
            },
        )
        logger.warning(f"Equilibrium beyond analytic range: {profile.summary()}")
        return profile

    stage = context.stages[n_max]
    profile = stage.profile
    diagnostics = dict(profile.diagnostics)
    diagnostics["n_max_upper"] = bound
    diagnostics["n_max_source"] = source
    diagnostics["steady_solves"] = context.steady_solves
    diagnostics["pi0"] = stage.steady.pi0
    for n, t_n in enumerate(profile.T, start=1):
        if math.isfinite(t_n) and t_n > 0:
            diagnostics[f"G{n}_at_T{n}"] = g_value(params, model, n, t_n)
    for n, s_n in enumerate(profile.S, start=1):
        if math.isfinite(s_n) and s_n > 0:
            posterior = posterior_age(n, s_n, stage.steady, profile, params, model, context.mode)
            diagnostics[f"U{n}_at_S{n}"] = type2_margin(params, model, n, posterior)
    for name, value in stage.steady.residuals.items():
        diagnostics[f"residual_{name}"] = value
    if not profile.is_monotone():
        logger.warning(f"Profile is not strictly decreasing: {profile.summary()}")
    diagnostics["monotone"] = str(profile.is_monotone())
    profile = profile.model_copy(update={"diagnostics": diagnostics})
    logger.info(f"Equilibrium: {profile.summary()} ({context.steady_solves} steady-state solves)")
    return profile


def verify_best_response(
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    sim_budget: int,
    deviations: list[Deviation],
    seed: int = 0,
    replications: int = 1,
    tag_rate: float = config.TAG_RATE,
) -> BestResponseReport:
    """
    Simulate each single-coordinate deviation against the population.

    A deviation improves when the tagged customers' mean payoff beats
    conforming customers of the same class by more than 2 standard errors.
    """
    report = BestResponseReport(profile=profile)
    for i, deviation in enumerate(deviations):
        sim = SimConfig(
            params=params,
            model=model,
            profile=profile,
            horizon_events=sim_budget,
            seed=seed + i,
            tagged_deviation=deviation,
            tag_rate=tag_rate,
        )
        estimate = simulator.replicate(sim, replications)
        tagged, base = estimate.tagged_payoff, estimate.baseline_payoff
        gain = tagged.mean - base.mean
        gain_se = math.hypot(tagged.se, base.se)
        improves = bool(math.isfinite(gain_se) and gain > 2.0 * gain_se)
        logger.info(
            f"Deviation {deviation.label()}: payoff {tagged.mean:.4g} ± {tagged.se:.2g} "
            f"vs {base.mean:.4g} ± {base.se:.2g} (n={tagged.count}) -> improves={improves}"
        )
        report.results.append(DeviationResult(
            deviation=deviation,
            deviation_payoff=tagged,
            equilibrium_payoff=base,
            gain=gain,
            gain_se=gain_se,
            improves=improves,
        ))
    return report
