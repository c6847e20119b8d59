"""
Stationary distribution of the observable queue under a fixed threshold profile.

The chain is tracked through its state structures (n present, k type I
waiters). Each density factors into a boundary value, where the newest
coordinate is zero, times a survival factor g: no service completion and
every intervening arrival already gone. Boundary values follow from the
balance equations, and pi0 is fixed by normalization.

Families used throughout:
  - k=0 family, entered at (0,0) with flux p00 or at (0,T1) when a type I
    waiter's patience runs out (flux p10 * F̄(T1)).
  - k=1 family (n_max = 3), entered at (1,0) with flux p10, left at age T1.

Three-customer structures are never gridded in 3-D: with x the age when
the second customer arrived, y the gap to the third arrival and z the
third customer's wait, their densities are closed-form in z, leaving 2-D
integrals over (x, y).
"""

import logging
import math

import numpy as np
from scipy import stats

from app.core import config
from app.core.errors import NumericalError
from app.models.market import MarketParams, ThresholdProfile
from app.models.state import SteadyState, StateStructure, Tolerance
from app.services import numerics
from app.services.distributions import ServiceModel

logger = logging.getLogger(__name__)

ANALYTIC_N_MAX = 3
# Far tail of the age axis: F̄ below this is treated as zero mass
AGE_TAIL = 1e-9
MAX_CYCLES = 2000


def structure_count(n_max: int) -> int:
    """Number of state structures, n_max (n_max + 1) / 2."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    return n_max * (n_max + 1) // 2


def structures(n_max: int) -> list[StateStructure]:
    """
    Structures the chain actually visits.

    For n_max >= 2 this has structure_count(n_max) entries. For n_max = 1
    the single-customer structure (0,a) exists on top of the empty system,
    one more than the closed-form count.
    """
    out = [StateStructure(n=0, k=0)]
    for n in range(1, n_max + 1):
        top = n - 1 if n < n_max else max(n_max - 2, 0)
        out.extend(StateStructure(n=n, k=k) for k in range(top + 1))
    return out


def cycle_survival(duration, threshold: float, lam: float) -> np.ndarray:
    """
    Probability that nobody who joined during `duration` is still present.

    Every joiner stays exactly `threshold` (together with anyone arriving
    behind them), so this is the Poisson sum over j completed cycles:
    sum_j e^{-lam (d - j S)} (lam (d - j S))^j / j!.
    """
    d = np.asarray(duration, dtype=float)
    if threshold <= 0:
        return np.ones_like(d)
    if math.isinf(threshold):
        return np.exp(-lam * np.maximum(d, 0.0))
    out = np.zeros_like(d)
    d_max = float(np.max(d, initial=0.0))
    # past this many cycles every Poisson term is below double precision
    mass_edge = lam * d_max + 10.0 * math.sqrt(lam * d_max) + 30.0
    m_max = int(min(math.floor(d_max / threshold), mass_edge, MAX_CYCLES))
    for j in range(m_max + 1):
        x = d - j * threshold
        live = x >= 0
        out = out + np.where(live, stats.poisson.pmf(j, lam * np.maximum(x, 0.0)), 0.0)
    return np.where(d >= 0, out, 0.0)


def _poisson_sum(duration: float, threshold: float, lam: float, m: int) -> float:
    total = 0.0
    for j in range(m + 1):
        x = duration - j * threshold
        if x < 0:
            break
        total += float(stats.poisson.pmf(j, lam * x))
    return total


def g_factor(
    k: int,
    n: int,
    m: int,
    a: float,
    w_last: float,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
) -> float:
    """
    Survival factor carrying a boundary density to an interior state.

    Case 1 (k+1 = n < n_max): the structure started at age 0, joiners cycle
    with S_n, times F̄(a). Case 2 (k+1 < n < n_max): the same Poisson sum over
    w_{n-1}, times F̄(a)/F̄(a - w_{n-1}). Case 3 (n = n_max): arrivals balk, so
    only F̄(a)/F̄(a - w_{n-1}). `m` is the number of completed joiner cycles.
    """
    n_max = profile.n_max
    if not (1 <= n <= n_max and 0 <= k <= n - 1) or m < 0:
        raise ValueError(f"illegal structure (k={k}, n={n}, m={m}) for n_max={n_max}")
    if n == n_max and n_max >= 2 and k > n_max - 2:
        raise ValueError(f"structure (k={k}, n={n}) cannot occur at n_max={n_max}")
    s_n = profile.s(n)
    if k >= 1 and math.isfinite(profile.t(k)) and math.isfinite(s_n) and s_n > 0:
        if m > math.floor(profile.t(k) / s_n):
            raise ValueError(f"m={m} exceeds the cycles possible before T_{k}")

    sf_a = float(model.sf(a))
    if k + 1 == n:
        if n == n_max:
            return sf_a
        return _poisson_sum(a, s_n, params.lam, m) * sf_a

    prior = float(model.sf(a - w_last))
    if prior <= 0:
        return 0.0
    ratio = sf_a / prior
    if n == n_max:
        return ratio
    return _poisson_sum(w_last, s_n, params.lam, m) * ratio


class ChainKernel:
    """Closed-form pieces of the chain for one profile."""

    def __init__(self, profile: ThresholdProfile, params: MarketParams, model: ServiceModel):
        if profile.n_max > ANALYTIC_N_MAX:
            raise NumericalError(
                f"analytic steady state covers n_max <= {ANALYTIC_N_MAX}, got {profile.n_max}; use the simulator"
            )
        if profile.simulation_required:
            raise NumericalError("profile has unsolved thresholds")
        self.n_max = profile.n_max
        self.lam = params.lam
        self.model = model
        self.S1 = profile.s(1)
        self.S2 = profile.s(2)
        self.T1 = profile.t(1) if profile.n_max >= 3 else math.inf

    def cycles_1(self, d):
        """Nobody who found one customer is still present after d."""
        if self.n_max < 2:
            return np.ones_like(np.asarray(d, dtype=float))
        return cycle_survival(d, self.S1, self.lam)

    def cycles_2(self, d):
        if self.n_max < 3:
            return np.ones_like(np.asarray(d, dtype=float))
        return cycle_survival(d, self.S2, self.lam)

    def k0_weight(self, x, p00: float, p10: float):
        """p(0,x) / F̄(x): fresh starts plus re-entries at T1."""
        x = np.asarray(x, dtype=float)
        weight = p00 * self.cycles_1(x)
        if p10 and math.isfinite(self.T1):
            weight = weight + p10 * np.where(x >= self.T1, self.cycles_1(x - self.T1), 0.0)
        return weight

    def p0a(self, a, p00: float, p10: float):
        return self.k0_weight(a, p00, p10) * self.model.sf(a)

    def p0aw1(self, a, w1, p00: float, p10: float):
        """p(0,a,w1) for w1 < S1 ∧ a; zero elsewhere."""
        a = np.asarray(a, dtype=float)
        w1 = np.asarray(w1, dtype=float)
        legal = (w1 >= 0) & (w1 <= a) & (w1 < self.S1)
        x = np.maximum(a - w1, 0.0)
        value = self.lam * self.cycles_2(w1) * self.model.sf(a) * self.k0_weight(x, p00, p10)
        return np.where(legal, value, 0.0)

    def p1a(self, a, p10: float):
        a = np.asarray(a, dtype=float)
        if self.n_max < 3:
            return np.zeros_like(a)
        return np.where(a < self.T1, p10 * self.cycles_2(a) * self.model.sf(a), 0.0)


def density_p0a(
    a,
    p00: float,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
):
    """p(0,a) from fresh service starts: p00 times the cycle sum with S1 times F̄(a)."""
    return ChainKernel(profile, params, model).p0a(a, p00, 0.0)


def age_axis(kernel: ChainKernel, n_points: int) -> np.ndarray:
    model = kernel.model
    a_max = model.tail_point(AGE_TAIL)
    finite = [v for v in (kernel.S1, kernel.S2, kernel.T1) if math.isfinite(v) and v > 0]
    dense = min(a_max, max([2.0 * v for v in finite] + [10.0 * model.mean, 10.0 / kernel.lam]))
    knots = numerics.threshold_knots([kernel.S1, kernel.S2], a_max)
    if math.isfinite(kernel.T1):
        knots.append(kernel.T1)
        knots.extend((kernel.T1 + np.asarray(numerics.threshold_knots([kernel.S1], a_max - kernel.T1))).tolist())
    knots.append(model.support_start)
    axis = numerics.axis_with_knots(0.0, a_max, n_points, knots, dense_until=dense)
    if a_max > 10.0 * dense:
        axis = np.unique(np.concatenate([axis, np.geomspace(dense, a_max, n_points)]))
    return axis


def _integrate_2d(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> float:
    return float(numerics.trapezoid(numerics.trapezoid(values, ys, axis=1), xs))


def solve_steady_state(
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    n_points: int = config.GRID_POINTS,
    tol: Tolerance | None = None,
) -> SteadyState:
    """
    Stationary densities for `profile` (n_max <= 3).

    Per unit of boundary flux, the completion fluxes and masses of every
    structure are integrated once; p10/p00 follows from the flux balance
    into (1,0), p00/pi0 from the balance of the empty state, and pi0 by
    bisection on total mass = 1.

    Raises:
        NumericalError: n_max > 3 or a degenerate flux balance
        BracketError: no pi0 in (0, 1) normalizes the mass
    """
    tol = tol or numerics.DEFAULT_TOLERANCE
    kernel = ChainKernel(profile, params, model)
    lam, n_max = params.lam, profile.n_max
    sf, pdf, tail = model.sf, model.pdf, model.integrated_sf

    ages = age_axis(kernel, n_points)
    a_max = float(ages[-1])
    sf_a, pdf_a = sf(ages), pdf(ages)
    w_fresh = kernel.k0_weight(ages, 1.0, 0.0)
    w_reentry = kernel.k0_weight(ages, 0.0, 1.0)

    # (x, y) grid: x = age at the second arrival, y = its wait so far
    flux_w1 = {"fresh": 0.0, "reentry": 0.0}
    mass_w1 = {"fresh": 0.0, "reentry": 0.0}
    flux_w2 = {"fresh": 0.0, "reentry": 0.0}
    mass_w2 = {"fresh": 0.0, "reentry": 0.0}
    gap_dense = max(10.0 * model.mean, 10.0 / lam)
    if n_max >= 2 and kernel.S1 > 0:
        y_hi = min(kernel.S1, a_max)
        ys = numerics.axis_with_knots(
            0.0, y_hi, n_points, numerics.threshold_knots([kernel.S2], y_hi), dense_until=gap_dense,
        )
        X, Y = np.meshgrid(ages, ys, indexing="ij")
        cyc = kernel.cycles_2(Y)
        sf_xy, pdf_xy = sf(X + Y), pdf(X + Y)
        if n_max >= 3 and kernel.S2 > 0:
            # windows past the age horizon add nothing
            L = np.minimum(min(kernel.S2, a_max), np.maximum(kernel.S1 - Y, 0.0))
            done = sf_xy - sf(X + Y + L)
            stay = tail(X + Y) - tail(X + Y + L)
        for name, weight in (("fresh", w_fresh), ("reentry", w_reentry)):
            W = weight[:, None] * cyc
            mass_w1[name] = lam * _integrate_2d(W * sf_xy, ages, ys)
            flux_w1[name] = lam * _integrate_2d(W * pdf_xy, ages, ys)
            if n_max >= 3 and kernel.S2 > 0:
                flux_w2[name] = lam ** 2 * _integrate_2d(W * done, ages, ys)
                mass_w2[name] = lam ** 2 * _integrate_2d(W * stay, ages, ys)

    # k=1 family per unit p10
    mass_1a = flux_1a = mass_1w = flux_1w = 0.0
    if n_max >= 3:
        u_hi = min(kernel.T1, a_max)
        if u_hi > 0:
            us = numerics.axis_with_knots(
                0.0, u_hi, n_points, numerics.threshold_knots([kernel.S2], u_hi), dense_until=gap_dense,
            )
            cyc_u = kernel.cycles_2(us)
            mass_1a = float(numerics.trapezoid(cyc_u * sf(us), us))
            flux_1a = float(numerics.trapezoid(cyc_u * pdf(us), us))
            if kernel.S2 > 0:
                L1 = np.minimum(min(kernel.S2, a_max), np.maximum(kernel.T1 - us, 0.0))
            else:
                L1 = np.zeros_like(us)
            mass_1w = lam * float(numerics.trapezoid(cyc_u * (tail(us) - tail(us + L1)), us))
            flux_1w = lam * float(numerics.trapezoid(cyc_u * (sf(us) - sf(us + L1)), us))

    # p10 = p00 * flux_w2[fresh] + p10 * (flux_w2[reentry] + flux_1w)
    ratio = 0.0
    if n_max >= 3:
        denom = 1.0 - flux_w2["reentry"] - flux_1w
        if denom <= 0:
            raise NumericalError(f"degenerate flux balance into (1,0): 1 - loop flux = {denom:.3g}")
        ratio = flux_w2["fresh"] / denom

    def mix(parts: dict[str, float]) -> float:
        return parts["fresh"] + ratio * parts["reentry"]

    p0_weight = w_fresh + ratio * w_reentry
    # λ pi0 = ∫ p(0,a) h(a) da
    empties = float(numerics.trapezoid(p0_weight * pdf_a, ages))
    if empties <= 0:
        raise NumericalError("no completions from the single-customer state")
    mass_1 = float(numerics.trapezoid(p0_weight * sf_a, ages))
    mass_2 = mix(mass_w1) + ratio * mass_1a
    mass_3 = mix(mass_w2) + ratio * mass_1w
    busy_per_p00 = mass_1 + mass_2 + mass_3

    def excess_mass(pi0: float) -> float:
        p00 = lam * pi0 / empties
        return pi0 + p00 * busy_per_p00 - 1.0

    pi0 = numerics.find_root(excess_mass, 1e-9, 1.0 - 1e-9, tol=tol.eps_mass * 1e-3)
    p00 = lam * pi0 / empties
    p10 = ratio * p00
    pi_n = np.array([pi0, p00 * mass_1, p00 * mass_2, p00 * mass_3][: n_max + 1])

    # Densities on the age axis, integrated over waiting times
    densities: dict[StateStructure, np.ndarray] = {StateStructure(1, 0): kernel.p0a(ages, p00, p10)}
    fractions = np.linspace(0.0, 1.0, n_points)
    p0aw1 = None
    if n_max >= 2:
        span = np.minimum(kernel.S1, ages)
        W1 = span[:, None] * fractions[None, :]
        # w1 strictly below S1 on the grid's last column
        W1 = np.minimum(W1, np.nextafter(kernel.S1, 0.0)) if math.isfinite(kernel.S1) else W1
        p0aw1 = kernel.p0aw1(ages[:, None], W1, p00, p10)
        densities[StateStructure(2, 0)] = numerics.trapezoid(p0aw1, fractions, axis=1) * span
    if n_max >= 3:
        densities[StateStructure(2, 1)] = kernel.p1a(ages, p10)
        k0_family = sf_a * (p00 + p10 * (ages >= kernel.T1))
        k1_family = p10 * sf_a * (ages < kernel.T1)
        densities[StateStructure(3, 0)] = np.clip(
            k0_family - densities[StateStructure(1, 0)] - densities[StateStructure(2, 0)], 0.0, None
        )
        densities[StateStructure(3, 1)] = np.clip(k1_family - densities[StateStructure(2, 1)], 0.0, None)
    if n_max == 2:
        densities[StateStructure(2, 0)] = np.clip(densities[StateStructure(2, 0)], 0.0, None)

    residuals = {
        "empty_balance": lam * pi0 - p00 * empties,
        "mass": float(pi_n.sum()) - 1.0,
        "busy_mass_identity": float(1.0 - pi0 - (p00 + p10) * model.mean),
        "restart_flux_waiters_only": p00 * mix(flux_w1) - p00 if n_max >= 2 else 0.0,
        "restart_flux": lam * pi0 + p00 * (mix(flux_w1) + ratio * flux_1a) - p00 if n_max >= 2 else lam * pi0 - p00,
        "reentry_flux_fresh_only": p00 * mix(flux_w2) - p10 if n_max >= 3 else 0.0,
        "reentry_flux": p00 * (mix(flux_w2) + ratio * flux_1w) - p10 if n_max >= 3 else 0.0,
    }
    logger.info(
        f"Steady state n_max={n_max} S={profile.S} T={profile.T}: pi0={pi0:.6g} "
        f"pi_n={np.round(pi_n, 6).tolist()} busy identity residual={residuals['busy_mass_identity']:.2e}"
    )
    return SteadyState(
        n_max=n_max,
        ages=ages,
        pi0=pi0,
        p00=p00,
        p10=p10,
        densities=densities,
        pi_n=pi_n,
        p0aw1=p0aw1,
        w_fraction=fractions,
        residuals=residuals,
    )


def structure_mass(steady: SteadyState) -> dict[StateStructure, float]:
    """Probability mass carried by each structure's age density."""
    return {s: float(numerics.trapezoid(d, steady.ages)) for s, d in steady.densities.items()}
