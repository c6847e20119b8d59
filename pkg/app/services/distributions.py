"""Service-time distributions: survival, hazard, mean residual life, sampling."""

import logging
import math
from abc import ABC, abstractmethod
from functools import cached_property

import numpy as np

from app.core.errors import ModelContractError
from app.models.service import (
    ExponentialSpec,
    HyperexponentialSpec,
    MixtureSpec,
    ParetoSpec,
    ServiceModelSpec,
    UniformSpec,
)
from app.models.state import Grid, Tolerance
from app.services import numerics

logger = logging.getLogger(__name__)

# Points used when a model certifies itself at construction
CERTIFY_POINTS = 600
TAIL_MASS = 1e-9
TAIL_CAP = 1e7


class ServiceModel(ABC):
    """
    Base class for service-time distributions.

    Every method takes a float or an ndarray of ages and is vectorized.
    Subclasses provide `sf`, `pdf`, `mean` and, where a closed form exists,
    `integrated_sf`; everything else derives from those.
    """

    kind: str = "generic"
    #: certified increasing mean residual life
    imrl: bool = False
    support_start: float = 0.0
    upper_support: float = math.inf

    @abstractmethod
    def sf(self, t):
        """Survival function F̄(t)."""

    @abstractmethod
    def pdf(self, t):
        """Density f(t)."""

    @property
    @abstractmethod
    def mean(self) -> float:
        """x̄ = E[X]."""

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def hf(self, t):
        """Hazard f(t)/F̄(t); nan where the survival vanishes."""
        sf = np.asarray(self.sf(t), dtype=float)
        pdf = np.asarray(self.pdf(t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sf > 0, pdf / np.where(sf > 0, sf, 1.0), np.nan)

    def integrated_sf(self, t):
        """∫_t^∞ F̄(s) ds, by quadrature unless a subclass knows better."""
        return self._integrated_sf_quadrature(t)

    def _integrated_sf_quadrature(self, t):
        def one(x: float) -> float:
            return numerics.integrate(
                lambda s: float(self.sf(s)), x, self.upper_support,
                tol=1e-9, scale=self.mean,
            )
        return np.vectorize(one, otypes=[float])(np.asarray(t, dtype=float))

    def mrl(self, t):
        """Mean residual life m_X(t) = ∫_t^∞ F̄ / F̄(t)."""
        sf = np.asarray(self.sf(t), dtype=float)
        tail = np.asarray(self.integrated_sf(t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sf > 0, tail / np.where(sf > 0, sf, 1.0), np.nan)

    @property
    def mrl_limit(self) -> float:
        """lim m_X(t); numeric estimate at the far tail unless overridden."""
        return float(self.mrl(self.tail_point(1e-10)))

    def tail_point(self, mass: float = TAIL_MASS) -> float:
        """Smallest doubling of the mean at which F̄ drops below `mass`."""
        if math.isfinite(self.upper_support):
            return self.upper_support
        t = max(self.mean, self.support_start, 1e-3)
        while self.sf(t) >= mass and t < TAIL_CAP:
            t *= 2.0
        return min(t, TAIL_CAP)

    @abstractmethod
    def rvs(self, rng: np.random.Generator, size=None):
        """Draw service times with the caller's generator."""


class Exponential(ServiceModel):
    kind = "exponential"
    imrl = True

    def __init__(self, rate: float):
        if rate <= 0:
            raise ModelContractError(f"exponential rate must be positive, got {rate}")
        self.rate = float(rate)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self.rate * np.maximum(t, 0.0))

    def pdf(self, t):
        return self.rate * self.sf(t)

    def hf(self, t):
        return self.rate * np.ones_like(np.asarray(t, dtype=float))

    def integrated_sf(self, t):
        return self.sf(t) / self.rate

    def mrl(self, t):
        return np.ones_like(np.asarray(t, dtype=float)) / self.rate

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def mrl_limit(self) -> float:
        return 1.0 / self.rate

    def rvs(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)


class Hyperexponential(ServiceModel):
    """Probabilistic mixture of exponential phases; always DFR, hence IMRL."""

    kind = "hyperexponential"
    imrl = True

    def __init__(self, probs, rates):
        probs = np.asarray(probs, dtype=float)
        rates = np.asarray(rates, dtype=float)
        if probs.shape != rates.shape or probs.ndim != 1 or len(probs) == 0:
            raise ModelContractError("hyperexponential needs matching probability and rate lists")
        if np.any(probs <= 0) or np.any(rates <= 0):
            raise ModelContractError("hyperexponential probabilities and rates must be positive")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ModelContractError(f"phase probabilities sum to {probs.sum()}, not 1")
        self.probs = probs
        self.rates = rates
        self._slowest = float(rates.min())

    def _terms(self, t):
        # e^{-(mu_i - mu_min) t}: no underflow of the dominant phase
        # finite cap so the slowest phase gives 0 * t = 0 at t = inf
        t = np.clip(np.asarray(t, dtype=float), 0.0, np.finfo(float).max)
        return np.exp(-np.multiply.outer(t, self.rates - self._slowest))

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self._slowest * np.maximum(t, 0.0)) * (self._terms(t) @ self.probs)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self._slowest * np.maximum(t, 0.0)) * (self._terms(t) @ (self.probs * self.rates))

    def hf(self, t):
        terms = self._terms(t)
        return (terms @ (self.probs * self.rates)) / (terms @ self.probs)

    def integrated_sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self._slowest * np.maximum(t, 0.0)) * (self._terms(t) @ (self.probs / self.rates))

    def mrl(self, t):
        terms = self._terms(t)
        return (terms @ (self.probs / self.rates)) / (terms @ self.probs)

    @property
    def mean(self) -> float:
        return float(np.sum(self.probs / self.rates))

    @property
    def mrl_limit(self) -> float:
        return 1.0 / self._slowest

    def rvs(self, rng, size=None):
        phase = rng.choice(len(self.probs), p=self.probs, size=size)
        return rng.exponential(1.0 / self.rates[phase])


class Pareto(ServiceModel):
    """Classic Pareto on [x_m, ∞); the MRL t/(α-1) grows without bound on the support."""

    kind = "pareto"
    imrl = True

    def __init__(self, shape: float, scale: float):
        if shape <= 1:
            raise ModelContractError(f"pareto shape must exceed 1 for a finite mean, got {shape}")
        if scale <= 0:
            raise ModelContractError(f"pareto scale must be positive, got {scale}")
        self.shape = float(shape)
        self.scale = float(scale)
        self.support_start = self.scale

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.scale, 1.0, (self.scale / np.maximum(t, self.scale)) ** self.shape)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        x = np.maximum(t, self.scale)
        return np.where(t < self.scale, 0.0, self.shape * self.scale ** self.shape / x ** (self.shape + 1))

    def integrated_sf(self, t):
        t = np.asarray(t, dtype=float)
        a, xm = self.shape, self.scale
        x = np.maximum(t, xm)
        tail = xm ** a * x ** (1.0 - a) / (a - 1.0)
        return np.where(t < xm, (xm - t) + tail, tail)

    @property
    def mean(self) -> float:
        return self.shape * self.scale / (self.shape - 1.0)

    @property
    def mrl_limit(self) -> float:
        return math.inf

    def rvs(self, rng, size=None):
        return self.scale * (1.0 + rng.pareto(self.shape, size=size))


class Uniform(ServiceModel):
    """Uniform service on [lo, hi]; IFR, so its MRL decreases."""

    kind = "uniform"
    imrl = False

    def __init__(self, lo: float, hi: float):
        if not 0 <= lo < hi:
            raise ModelContractError(f"uniform needs 0 <= lo < hi, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self.upper_support = self.hi

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip((self.hi - t) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t < self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def integrated_sf(self, t):
        t = np.asarray(t, dtype=float)
        width = self.hi - self.lo
        inside = np.clip(self.hi - t, 0.0, width) ** 2 / (2.0 * width)
        return np.where(t < self.lo, (self.lo - t) + width / 2.0, inside)

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def mrl_limit(self) -> float:
        return 0.0

    def rvs(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)


class Mixture(ServiceModel):
    """Weighted mixture of other models; IMRL must be certified on a grid."""

    kind = "mixture"

    def __init__(self, components: list[ServiceModel], weights, tol: Tolerance | None = None):
        weights = np.asarray(weights, dtype=float)
        if len(components) == 0 or len(components) != len(weights):
            raise ModelContractError("mixture needs one weight per component")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ModelContractError("mixture weights must be positive and sum to 1")
        self.components = components
        self.weights = weights
        self.support_start = min(c.support_start for c in components)
        self.upper_support = max(c.upper_support for c in components)
        hi = self.tail_point(1e-6)
        grid = Grid.from_function(self.support_start, hi, CERTIFY_POINTS, lambda x: np.zeros_like(x))
        self.imrl = certify_imrl(self, grid, tol)
        logger.info(f"Mixture of {len(components)} components: IMRL certified={self.imrl}")

    def _combine(self, method: str, t):
        return sum(w * np.asarray(getattr(c, method)(t), dtype=float) for c, w in zip(self.components, self.weights))

    def sf(self, t):
        return self._combine("sf", t)

    def pdf(self, t):
        return self._combine("pdf", t)

    def integrated_sf(self, t):
        return self._combine("integrated_sf", t)

    @cached_property
    def _mean(self) -> float:
        return float(sum(w * c.mean for c, w in zip(self.components, self.weights)))

    @property
    def mean(self) -> float:
        return self._mean

    def rvs(self, rng, size=None):
        which = rng.choice(len(self.components), p=self.weights, size=size)
        if size is None:
            return self.components[which].rvs(rng)
        out = np.empty(np.shape(which))
        for i, comp in enumerate(self.components):
            mask = which == i
            out[mask] = comp.rvs(rng, size=int(mask.sum()))
        return out


# ============== Operations ==============

def _check_age(model: ServiceModel, t: float) -> None:
    if t < 0:
        raise ValueError(f"age must be non-negative, got {t}")
    if float(model.sf(t)) <= 0.0:
        raise ModelContractError(f"hazard undefined beyond support (t={t})")


def survival(model: ServiceModel, t: float) -> float:
    if t < 0:
        raise ValueError(f"age must be non-negative, got {t}")
    return float(model.sf(t))


def hazard(model: ServiceModel, t: float) -> float:
    _check_age(model, t)
    return float(model.hf(t))


def mrl(model: ServiceModel, t: float) -> float:
    _check_age(model, t)
    return float(model.mrl(t))


def mrl_limit(model: ServiceModel) -> float:
    return model.mrl_limit


def sample(model: ServiceModel, rng: np.random.Generator, size=None):
    return model.rvs(rng, size=size)


def certify_imrl(model: ServiceModel, grid: Grid, tol: Tolerance | None = None) -> bool:
    """True iff the MRL never drops by more than eps_mass between consecutive grid points."""
    eps = (tol or numerics.DEFAULT_TOLERANCE).eps_mass
    points = grid.points
    points = points[np.asarray(model.sf(points)) > 0]
    if len(points) < 2:
        return True
    values = np.asarray(model.mrl(points), dtype=float)
    return bool(np.all(np.diff(values) >= -eps))


def require_imrl(model: ServiceModel) -> None:
    if not model.imrl:
        raise ModelContractError(f"model failed IMRL certification ({model.kind})")


def build_service_model(spec: ServiceModelSpec) -> ServiceModel:
    """Instantiate a model from its validated config spec."""
    match spec:
        case ExponentialSpec():
            return Exponential(spec.rate)
        case HyperexponentialSpec():
            return Hyperexponential(spec.probs, spec.rates)
        case ParetoSpec():
            return Pareto(spec.shape, spec.scale)
        case UniformSpec():
            return Uniform(spec.lo, spec.hi)
        case MixtureSpec():
            return Mixture([build_service_model(c) for c in spec.components], spec.weights)
    raise ModelContractError(f"unknown service model kind: {spec!r}")
