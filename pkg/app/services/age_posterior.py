"""
Posterior of the service age seen by a type II waiter.

An arrival finding n customers cannot see the age a of the current
service. The prior f_{A|N=n} comes from the steady state; after waiting t
with nothing observed, Bayes' rule reweights it by the likelihood of the
wait. Ages on every curve here reuse the steady-state age axis.
"""

import logging
import math

import numpy as np
from scipy import integrate as sp_integrate

from app.core.errors import NullEventError
from app.models.market import MarketParams, ThresholdProfile
from app.models.state import AgePosterior, ArrivalMixture, Grid, Likelihood, SteadyState
from app.services import numerics
from app.services.distributions import ServiceModel
from app.services.steady_state import ChainKernel

logger = logging.getLogger(__name__)

NULL_MASS = 1e-14
# Points on the r axis of the arrival-window tables
WINDOW_POINTS = 400


def age_density_given_n(n: int, steady: SteadyState) -> Grid:
    """
    f_{A|N=n} on the steady-state age axis.

    n = 1: p(0,a)/pi1. n = 2: [p(1,a) + ∫p(0,a,w1)dw1]/pi2. n = 3 is the
    arrival-time prior used to decide whether arrivals finding three join.

    Raises:
        NullEventError: the system is never seen with n customers
    """
    if not 1 <= n <= steady.n_max:
        raise ValueError(f"no age density for n={n} with n_max={steady.n_max}")
    density = steady.age_mass(n)
    mass = float(numerics.trapezoid(density, steady.ages))
    if mass <= NULL_MASS:
        raise NullEventError(f"conditioning on null event: N={n} has mass {mass:.3g}")
    return Grid.on_axis(steady.ages, density / mass)


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


class ArrivalWindow:
    """
    P(Q <= r ∧ R(0,a)) tabulated over an age axis and r, Q ~ Exp(lam).

    Each entry is ∫_0^r lam e^{-lam s} F̄(a+s)/F̄(a) ds, the residual-life
    weighted normalizer integrated by parts. Past r = WINDOW_DECAY / lam the
    table is flat to double precision.
    """

    WINDOW_DECAY = 30.0

    def __init__(self, ages, longest: float, lam: float, model: ServiceModel, n_points: int = WINDOW_POINTS):
        self.ages = np.atleast_1d(np.asarray(ages, dtype=float))
        self.top = max(min(longest, self.WINDOW_DECAY / lam), 0.0)
        self.r = np.linspace(0.0, self.top, n_points)
        ratio = _safe_ratio(model.sf(self.ages[:, None] + self.r[None, :]), model.sf(self.ages)[:, None])
        weights = lam * np.exp(-lam * self.r)[None, :] * ratio
        self.table = sp_integrate.cumulative_trapezoid(weights, self.r, axis=1, initial=0.0)

    def __call__(self, limit) -> np.ndarray:
        """Window at `limit`, shaped (n_ages,) or (n_ages, k) row-aligned with the ages."""
        limit = np.asarray(limit, dtype=float)
        flat = limit.ndim <= 1
        L = np.broadcast_to(limit.reshape(-1, 1) if flat else limit, (len(self.ages), 1 if flat else limit.shape[1]))
        if self.top <= 0:
            out = np.zeros(L.shape)
        else:
            pos = np.clip(L, 0.0, self.top) / self.top * (len(self.r) - 1)
            i = np.clip(np.floor(pos).astype(int), 0, len(self.r) - 2)
            frac = pos - i
            lo = np.take_along_axis(self.table, i, axis=1)
            hi = np.take_along_axis(self.table, i + 1, axis=1)
            out = lo + frac * (hi - lo)
        return out[:, 0] if flat else out


def arrival_window(a, limit, lam: float, model: ServiceModel):
    """P(Q <= limit ∧ R(0,a)) for ages `a` and matching limits."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    limit = np.broadcast_to(np.asarray(limit, dtype=float), a.shape)
    window = ArrivalWindow(a, float(np.max(limit)), lam, model)
    return window(limit)


def _likelihood(y: float, window: ArrivalWindow, limit, lam: float, model: ServiceModel, mode: Likelihood):
    """f_{Y|A=a}(y) over the window's ages, one branch with abandonment limit `limit`."""
    limit = np.asarray(limit, dtype=float)
    a = window.ages if limit.ndim <= 1 else window.ages[:, None]
    limit = np.broadcast_to(limit, np.broadcast(a, limit).shape)
    inside = y <= limit
    survive = _safe_ratio(model.sf(a + y), model.sf(a))
    if mode == Likelihood.SURVIVAL:
        return np.where(inside, survive, 0.0)
    norm = window(limit)
    value = lam * math.exp(-lam * y) * _safe_ratio(survive, norm)
    return np.where(inside & (norm > 0), value, 0.0)


def y_density_given_age_n1(
    y: float,
    a,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    mode: Likelihood = Likelihood.INSPECTOR,
):
    """
    Density of the wait Y given one customer present at age a on arrival.

    Args:
        y: the wait, 0 <= y <= S1
        a: service age at arrival (scalar or array)
        mode: `inspector` gives the normalized density, `survival` the plain
            probability that nothing happened during y

    Raises:
        ModelContractError / NullEventError: a beyond support or zero normalizer
    """
    if y < 0:
        raise ValueError(f"wait must be non-negative, got {y}")
    a_arr = np.asarray(a, dtype=float)
    if np.any(np.asarray(model.sf(a_arr)) <= 0):
        raise NullEventError(f"conditioning on null event: age beyond support")
    window = ArrivalWindow(a_arr.ravel(), profile.s(1), params.lam, model)
    value = _likelihood(y, window, profile.s(1), params.lam, model, mode).reshape(a_arr.shape)
    return float(value) if a_arr.ndim == 0 else value


def _w1_cells(span, w_fraction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Midpoints and widths of the w1 cells on [0, span].

    Midpoints stay strictly below S1, where the first waiter's remaining
    patience S1 - w1 vanishes and the inspector likelihood blows up.
    """
    span = np.asarray(span, dtype=float)[..., None]
    mid = 0.5 * (w_fraction[:-1] + w_fraction[1:])
    return span * mid, span * np.diff(w_fraction)


def arrival_mixture(
    a: float,
    steady: SteadyState,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
) -> ArrivalMixture:
    """What an arrival finding two present at age a faces: (1,a) or (0,a,w1)."""
    kernel = ChainKernel(profile, params, model)
    span = min(kernel.S1, a)
    p1 = float(kernel.p1a(a, steady.p10))
    if span <= 0:
        return ArrivalMixture(prob_I1=1.0 if p1 > 0 else 0.0, w1_points=np.zeros(1), w1_weights=np.ones(1))
    w1, widths = _w1_cells(span, steady.w_fraction)
    cells = kernel.p0aw1(a, w1, steady.p00, steady.p10) * widths
    mass = float(np.sum(cells))
    total = p1 + mass
    if total <= NULL_MASS:
        raise NullEventError(f"conditioning on null event: no N=2 state at age {a:.4g}")
    weights = cells / mass if mass > 0 else widths / span
    return ArrivalMixture(prob_I1=p1 / total, w1_points=w1, w1_weights=weights)


def _n2_branch_likelihood(
    t: float,
    window: ArrivalWindow,
    prob1,
    limit1,
    w1: np.ndarray,
    w1_mass: np.ndarray,
    S1: float,
    S2: float,
    lam: float,
    model: ServiceModel,
    mode: Likelihood,
) -> np.ndarray:
    """
    Two-structure likelihood of waiting t, one row of w1 cells per window age.

    The type I branch (weight prob1) ends by limit1 = S2 ∧ (T1 - a). The
    (0,a,w1) branch ends by S2 ∧ (S1 - w1) and is averaged over w1 with the
    cell masses w1_mass.
    """
    like1 = _likelihood(t, window, limit1, lam, model, mode)
    branch0 = _likelihood(t, window, np.minimum(S2, S1 - w1), lam, model, mode)
    like0 = _safe_ratio(np.sum(w1_mass * branch0, axis=1), np.sum(w1_mass, axis=1))
    return prob1 * like1 + (1.0 - prob1) * like0


def y_density_given_age_n2(
    y: float,
    a: float,
    mixture: ArrivalMixture,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    mode: Likelihood = Likelihood.INSPECTOR,
) -> float:
    """
    Density of Y given two present at age a: a mixture over the structure.

    With the type I waiter ahead (prob_I1) the wait ends by S2, by the
    waiter's patience T1 - a or by completion. Otherwise the first waiter
    abandons at S1 - w1, so that branch is averaged over w1.

    Raises:
        NullEventError: a >= T1 while the type I branch has positive weight
    """
    if y < 0:
        raise ValueError(f"wait must be non-negative, got {y}")
    T1, S1, S2 = profile.t(1), profile.s(1), profile.s(2)
    if a >= T1 and mixture.prob_I1 > 0:
        raise NullEventError("inconsistent state: customer past threshold")
    limit1 = min(S2, max(T1 - a, 0.0))
    w1 = np.asarray(mixture.w1_points, dtype=float)[None, :]
    longest = max(limit1, float(np.max(np.minimum(S2, S1 - w1))))
    window = ArrivalWindow([a], longest, params.lam, model)
    value = _n2_branch_likelihood(
        y, window, mixture.prob_I1, limit1, w1, np.asarray(mixture.w1_weights)[None, :],
        S1, S2, params.lam, model, mode,
    )
    return float(value[0])


def _n2_likelihood(t: float, steady: SteadyState, profile, params, model, mode: Likelihood) -> np.ndarray:
    """Likelihood of waiting t for every age on the axis, vectorized over (a, w1)."""
    kernel = ChainKernel(profile, params, model)
    ages = steady.ages
    T1, S1, S2 = kernel.T1, kernel.S1, kernel.S2

    p1 = kernel.p1a(ages, steady.p10)
    W1, widths = _w1_cells(np.minimum(S1, ages), steady.w_fraction)
    w1_mass = kernel.p0aw1(ages[:, None], W1, steady.p00, steady.p10) * widths
    prob1 = _safe_ratio(p1, p1 + np.sum(w1_mass, axis=1))

    limit1 = np.minimum(S2, np.maximum(T1 - ages, 0.0))
    window = ArrivalWindow(ages, max(float(np.max(np.minimum(S2, S1 - W1))), min(S2, T1)), params.lam, model)
    return _n2_branch_likelihood(t, window, prob1, limit1, W1, w1_mass, S1, S2, params.lam, model, mode)


def posterior_age(
    n: int,
    t: float,
    steady: SteadyState,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    mode: Likelihood = Likelihood.INSPECTOR,
) -> AgePosterior:
    """
    f_{A|N=n,Y=t}: prior times likelihood of the wait, renormalized.

    Raises:
        NullEventError: t beyond the customer's own patience or zero evidence
    """
    if n not in (1, 2):
        raise ValueError(f"posteriors are available for n in (1, 2), got {n}")
    if t < 0 or t > profile.s(n):
        raise NullEventError(f"posterior undefined: t={t} outside [0, S{n}={profile.s(n)}]")
    prior = age_density_given_n(n, steady)
    ages = steady.ages
    if n == 1:
        live = np.asarray(model.sf(ages)) > 0
        window = ArrivalWindow(ages, profile.s(1), params.lam, model)
        like = np.where(live, _likelihood(t, window, profile.s(1), params.lam, model, mode), 0.0)
    else:
        like = _n2_likelihood(t, steady, profile, params, model, mode)
    unnormalized = like * prior.values
    normalizer = float(numerics.trapezoid(unnormalized, ages))
    if not np.isfinite(normalizer) or normalizer <= 0.0:
        raise NullEventError(f"posterior undefined: evidence {normalizer:.3g} for N={n}, t={t:.4g}")
    logger.debug(f"Posterior N={n} t={t:.4g}: evidence={normalizer:.4g}")
    return AgePosterior(n=n, t=t, ages=ages, density=unnormalized / normalizer, normalizer=normalizer)


def prior_posterior(n: int, steady: SteadyState) -> AgePosterior:
    """The arrival-time prior wrapped as a posterior at t = 0 (no update)."""
    prior = age_density_given_n(n, steady)
    return AgePosterior(n=n, t=0.0, ages=steady.ages, density=prior.values, normalizer=1.0)


def expected_residual(posterior: AgePosterior, t: float, model: ServiceModel) -> float:
    """∫ mrl(a + t) posterior(a) da: expected remaining time of the current service."""
    residual = np.asarray(model.mrl(posterior.ages + t), dtype=float)
    weighted = np.where(posterior.density > 0, np.nan_to_num(residual) * posterior.density, 0.0)
    return float(numerics.trapezoid(weighted, posterior.ages))

