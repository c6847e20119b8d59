"""Numerical containers: grids, tolerances, steady states and posteriors."""

import enum
from dataclasses import dataclass, field

import numpy as np

from app.core import config


@dataclass(frozen=True)
class Tolerance:
    """Tolerances shared by every analytic module."""
    eps_root: float = config.EPS_ROOT
    eps_quad: float = config.EPS_QUAD
    eps_mass: float = config.EPS_MASS

    def __post_init__(self):
        if min(self.eps_root, self.eps_quad, self.eps_mass) <= 0:
            raise ValueError("tolerances must be strictly positive")


@dataclass(frozen=True)
class Grid:
    """Grid on [lo, hi] carrying one value per point; uniform unless `axis` is given."""
    lo: float
    hi: float
    n_points: int
    values: np.ndarray
    axis: np.ndarray | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.n_points < 2:
            raise ValueError("grid needs at least 2 points")
        if len(self.values) != self.n_points:
            raise ValueError("grid values must match n_points")
        if self.axis is not None and len(self.axis) != self.n_points:
            raise ValueError("grid axis must match n_points")

    @property
    def points(self) -> np.ndarray:
        if self.axis is not None:
            return self.axis
        return np.linspace(self.lo, self.hi, self.n_points)

    @classmethod
    def from_function(cls, lo: float, hi: float, n_points: int, func) -> "Grid":
        points = np.linspace(lo, hi, n_points)
        return cls(lo=lo, hi=hi, n_points=n_points, values=np.asarray(func(points), dtype=float))

    @classmethod
    def on_axis(cls, axis: np.ndarray, values: np.ndarray) -> "Grid":
        axis = np.asarray(axis, dtype=float)
        return cls(lo=float(axis[0]), hi=float(axis[-1]), n_points=len(axis),
                   values=np.asarray(values, dtype=float), axis=axis)


@dataclass(frozen=True)
class StateStructure:
    """A Markov-chain state structure: n customers present, k of them type I waiters."""
    n: int
    k: int

    @property
    def label(self) -> str:
        if self.n == 0:
            return "(0)"
        waits = ",".join(f"w{i}" for i in range(self.k + 1, self.n))
        return f"({self.k},a{',' + waits if waits else ''})"


@dataclass(frozen=True)
class SteadyState:
    """Solved stationary distribution for a fixed threshold profile.

    `densities` maps each structure with waiters to its density over the age
    axis, already integrated over the waiting-time coordinates. The full
    two-dimensional p(0,a,w1) is kept in `p0aw1` (rows: age, columns: the
    fraction s of min(S1, a), w1 = s * min(S1, a)) for the age posterior.
    """
    n_max: int
    ages: np.ndarray
    pi0: float
    p00: float
    p10: float
    densities: dict[StateStructure, np.ndarray]
    pi_n: np.ndarray
    p0aw1: np.ndarray | None = None
    w_fraction: np.ndarray | None = None
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def total_mass(self) -> float:
        return float(self.pi_n.sum())

    def age_mass(self, n: int) -> np.ndarray:
        """pi(n, a) on the age axis: all structures with n customers."""
        parts = [d for s, d in self.densities.items() if s.n == n]
        if not parts:
            return np.zeros_like(self.ages)
        return np.sum(parts, axis=0)


@dataclass(frozen=True)
class ArrivalMixture:
    """
    What an arrival finding N=2 at age a may be facing.

    The (0,a,w1) branch is carried as cell midpoints w1_points with the
    probability of each cell in w1_weights.
    """
    prob_I1: float
    w1_points: np.ndarray
    w1_weights: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.prob_I1 <= 1.0:
            raise ValueError(f"prob_I1 out of range: {self.prob_I1}")
        if np.shape(self.w1_points) != np.shape(self.w1_weights):
            raise ValueError("w1_points and w1_weights must have the same shape")


@dataclass(frozen=True)
class AgePosterior:
    """Density of the service age seen by a type II customer after waiting t."""
    n: int
    t: float
    ages: np.ndarray
    density: np.ndarray
    normalizer: float


class CustomerType(str, enum.Enum):
    """Type I waiters have seen a completion since arriving; type II have not."""
    TYPE_I = "type_i"
    TYPE_II = "type_ii"


class Likelihood(str, enum.Enum):
    """How a type II waiter's elapsed wait updates the age distribution."""
    INSPECTOR = "inspector"
    SURVIVAL = "survival"


@dataclass(frozen=True)
class UtilityCurve:
    """Expected utility against elapsed time for one queue position and type."""
    n: int
    kind: CustomerType
    values: Grid
