import numpy as np
import pytest

from app.models.market import MarketParams, ThresholdProfile
from app.services.distributions import Exponential, Hyperexponential

# Grid used by tests that solve the chain many times
SMALL_GRID = 80


@pytest.fixture
def hyperexp():
    """Two-phase hyperexponential with mean 1.2 and limiting MRL 5."""
    return Hyperexponential([0.95, 0.05], [1.0, 0.2])


@pytest.fixture
def market():
    return MarketParams(lam=3.0, V=4.85, C=1.0)


@pytest.fixture
def exp1():
    return Exponential(1.0)


@pytest.fixture
def reference_profile():
    """A three-customer profile with every kind of threshold finite."""
    return ThresholdProfile(n_max=3, T=[7.73], S=[7.2, 3.13])


def truncated_geometric(rho: float, n_max: int) -> np.ndarray:
    """Occupancy of an M/M/1 queue whose arrivals balk at n_max."""
    weights = rho ** np.arange(n_max + 1)
    return weights / weights.sum()
