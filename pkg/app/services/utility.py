"""Expected utility of staying in line, for type I and type II waiters."""

import logging

import numpy as np

from app.core.errors import NullEventError
from app.models.market import MarketParams, ThresholdProfile
from app.models.state import AgePosterior, CustomerType, Grid, Likelihood, SteadyState, UtilityCurve
from app.services import distributions
from app.services.age_posterior import expected_residual, posterior_age
from app.services.distributions import ServiceModel

logger = logging.getLogger(__name__)


def g_value(params: MarketParams, model: ServiceModel, n: int, t: float) -> float:
    """
    G_n(t) = V - C (mrl(t) + (n-1) x̄) for a type I waiter with n ahead.

    n = 0 means in service: the reward is certain and no more waiting is paid.

    Raises:
        ModelContractError: t beyond the support of the service time
    """
    if n < 0:
        raise ValueError(f"queue position must be non-negative, got {n}")
    if n == 0:
        return params.V
    return params.V - params.C * (distributions.mrl(model, t) + (n - 1) * model.mean)


def u_type1(params: MarketParams, model: ServiceModel, n: int, t: float) -> float:
    return max(g_value(params, model, n, t), 0.0)


def type2_margin(params: MarketParams, model: ServiceModel, n: int, posterior: AgePosterior) -> float:
    """Signed utility of a type II waiter: V - C(expected residual + (n-1) x̄), not clamped."""
    if not posterior.normalizer > 0.0:
        raise NullEventError(f"unreachable conditioning event: N={n}, t={posterior.t:.4g}")
    residual = expected_residual(posterior, posterior.t, model)
    return params.V - params.C * (residual + (n - 1) * model.mean)


def u_type2(params: MarketParams, model: ServiceModel, n: int, t: float, posterior: AgePosterior) -> float:
    """
    Û_n(t) given the age posterior for (n, t).

    Raises:
        NullEventError: the posterior has no mass
    """
    if n < 1:
        raise ValueError(f"type II waiters have someone ahead, got n={n}")
    if abs(posterior.t - t) > 1e-12 or posterior.n != n:
        raise ValueError(f"posterior is for (n={posterior.n}, t={posterior.t}), not (n={n}, t={t})")
    return max(type2_margin(params, model, n, posterior), 0.0)


def ode_residual(params: MarketParams, model: ServiceModel, n: int, t: float, dt: float) -> float:
    """
    |dG_n/dt - (C - h(t)(U_{n-1}(0) - G_n(t)))| by forward difference.

    U_{n-1}(0) is V for n = 1, otherwise (V - C(n-1)x̄)⁺.
    """
    if n < 1 or dt <= 0:
        raise ValueError(f"need n >= 1 and dt > 0, got n={n}, dt={dt}")
    g_now = g_value(params, model, n, t)
    slope = (g_value(params, model, n, t + dt) - g_now) / dt
    ahead = params.V if n == 1 else max(params.V - params.C * (n - 1) * model.mean, 0.0)
    rhs = params.C - distributions.hazard(model, t) * (ahead - g_now)
    return abs(slope - rhs)


def utility_curve(
    params: MarketParams,
    model: ServiceModel,
    n: int,
    kind: CustomerType,
    times: np.ndarray,
    steady: SteadyState | None = None,
    profile: ThresholdProfile | None = None,
    mode: Likelihood = Likelihood.INSPECTOR,
) -> UtilityCurve:
    """
    Utility against elapsed time for export.

    Type II curves need the steady state and profile they were solved
    under; times past the waiter's own patience S_n are dropped.
    """
    times = np.asarray(times, dtype=float)
    if kind == CustomerType.TYPE_I:
        values = np.array([u_type1(params, model, n, t) for t in times])
    else:
        if steady is None or profile is None:
            raise ValueError("type II utility curves need a steady state and its profile")
        times = times[times <= profile.s(n)]
        values = np.array([
            u_type2(params, model, n, t, posterior_age(n, t, steady, profile, params, model, mode))
            for t in times
        ])
    if len(times) < 2:
        raise ValueError(f"utility curve for n={n} ({kind.value}) needs at least two admissible times")
    logger.info(f"Utility curve n={n} {kind.value}: {len(times)} points, U(0)={values[0]:.4g}")
    return UtilityCurve(n=n, kind=kind, values=Grid.on_axis(times, values))
