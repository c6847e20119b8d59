"""Deterministic numerical kernel: quadrature, bracketed roots, grids."""

import logging
import math
import warnings
from typing import Callable, Iterable

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize

from app.core.errors import BracketError, ConvergenceError
from app.models.state import Tolerance

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = Tolerance()

# Adaptive subdivision cap handed to QUADPACK
MAX_SUBINTERVALS = 200
MAX_DOUBLINGS = 60
MAX_ROOT_ITERATIONS = 200
# Thresholds with more multiples than this below `hi` contribute no knots
MAX_KNOTS_PER_THRESHOLD = 500


def truncation_point(
    envelope: Callable[[float], float],
    start: float,
    cutoff: float,
) -> float:
    """Double `start` until the envelope drops below `cutoff`."""
    upper = start
    for _ in range(MAX_DOUBLINGS):
        if abs(envelope(upper)) < cutoff:
            return upper
        upper *= 2.0
    raise ConvergenceError("integral did not converge: tail envelope never decayed")


def integrate(
    func: Callable[[float], float],
    lo: float,
    hi: float = math.inf,
    tol: float = DEFAULT_TOLERANCE.eps_quad,
    envelope: Callable[[float], float] | None = None,
    scale: float = 1.0,
    points: Iterable[float] | None = None,
) -> float:
    """
    Integrate `func` over [lo, hi) to absolute accuracy `tol`.

    An infinite upper limit is truncated where the envelope (the integrand
    itself by default) falls below tol * 1e-3, starting the search at
    lo + 10 * scale. Callers split at known kinks through `points`.

    Raises:
        ConvergenceError: if the adaptive rule cannot reach `tol`
    """
    if math.isinf(hi):
        hi = truncation_point(envelope or func, lo + 10.0 * scale, tol * 1e-3)
    if hi <= lo:
        return 0.0

    breaks = None
    if points is not None:
        breaks = sorted(p for p in points if lo < p < hi) or None

    with warnings.catch_warnings():
        warnings.simplefilter("error", sp_integrate.IntegrationWarning)
        try:
            value, _ = sp_integrate.quad(
                func, lo, hi,
                epsabs=tol, epsrel=0.0,
                limit=MAX_SUBINTERVALS,
                points=breaks,
            )
        except sp_integrate.IntegrationWarning as e:
            raise ConvergenceError(f"integral did not converge on [{lo}, {hi}]: {e}") from e
    return float(value)


def find_root(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = DEFAULT_TOLERANCE.eps_root,
) -> float:
    """
    Root of `func` inside the bracket [lo, hi].

    Brent's method: bisection steps safeguard secant / inverse-quadratic
    steps, so the result never leaves the bracket.

    Raises:
        BracketError: if func(lo) and func(hi) have the same sign
        ConvergenceError: if the iteration cap is hit
    """
    f_lo, f_hi = func(lo), func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketError(f"root not bracketed on [{lo}, {hi}] (f={f_lo:.6g}, {f_hi:.6g})")
    try:
        root = optimize.brentq(func, lo, hi, xtol=tol, maxiter=MAX_ROOT_ITERATIONS)
    except RuntimeError as e:
        raise ConvergenceError(f"root search did not converge: {e}") from e
    return float(min(max(root, lo), hi))


def axis_with_knots(
    lo: float,
    hi: float,
    n_points: int,
    knots: Iterable[float] = (),
    dense_until: float | None = None,
) -> np.ndarray:
    """
    Uniform axis on [lo, hi] merged with mandatory knots.

    With `dense_until`, a second uniform block of n_points covers
    [lo, dense_until] so the early region is resolved finely.
    """
    parts = [np.linspace(lo, hi, n_points)]
    if dense_until is not None and lo < dense_until < hi:
        parts.append(np.linspace(lo, dense_until, n_points))
    knots = [k for k in knots if np.isfinite(k) and lo <= k <= hi]
    if knots:
        parts.append(np.asarray(knots, dtype=float))
    return np.unique(np.concatenate(parts))


def threshold_knots(thresholds: Iterable[float], hi: float) -> list[float]:
    """All multiples of each finite positive threshold up to `hi`."""
    knots: list[float] = []
    for s in thresholds:
        if s is None or not np.isfinite(s) or s <= 0:
            continue
        count = int(math.floor(hi / s))
        if count > MAX_KNOTS_PER_THRESHOLD:
            continue
        knots.extend(m * s for m in range(1, count + 1) if m * s < hi)
    return knots


def trapezoid(values: np.ndarray, points: np.ndarray, axis: int = -1) -> np.ndarray:
    return sp_integrate.trapezoid(values, points, axis=axis)
