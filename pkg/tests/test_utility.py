import numpy as np
import pytest

from app.core.errors import NullEventError
from app.models.market import MarketParams
from app.models.state import AgePosterior, CustomerType
from app.services import distributions
from app.services.steady_state import solve_steady_state
from app.services.utility import g_value, ode_residual, type2_margin, u_type1, u_type2, utility_curve


def point_mass(model_age: float, n: int, t: float, width: float = 0.01) -> AgePosterior:
    """Posterior concentrated at one age (trapezoid weight one at the middle point)."""
    ages = np.array([model_age - width, model_age, model_age + width])
    return AgePosterior(n=n, t=t, ages=ages, density=np.array([0.0, 1.0 / width, 0.0]), normalizer=1.0)


def test_g_value_at_zero(market, hyperexp):
    assert g_value(market, hyperexp, 1, 0.0) == pytest.approx(4.85 - 1.2)
    assert g_value(market, hyperexp, 0, 3.0) == market.V


def test_g_value_steps_by_one_mean_service(market, hyperexp):
    for n in range(1, 5):
        step = g_value(market, hyperexp, n, 2.0) - g_value(market, hyperexp, n + 1, 2.0)
        assert step == pytest.approx(market.C * hyperexp.mean)


def test_u_type1_clamps_at_zero(market, hyperexp):
    assert u_type1(market, hyperexp, 1, 20.0) == 0.0
    assert u_type1(market, hyperexp, 1, 0.0) == pytest.approx(3.65)


def test_ode_residual_exponential(exp1):
    params = MarketParams(lam=1.0, V=4.85, C=1.0)
    for n in range(1, 6):
        for t in (0.0, 1.0, 5.0):
            assert ode_residual(params, exp1, n, t, 1e-5) == pytest.approx(0.0, abs=1e-6)


def test_ode_residual_hyperexponential(market, hyperexp):
    for n in range(1, 6):
        for t in np.linspace(0.0, 10.0, 50):
            assert ode_residual(market, hyperexp, n, float(t), 1e-5) <= 1e-3


def test_u_type2_point_mass(market, hyperexp):
    posterior = point_mass(1.0, n=1, t=0.5)
    expected = market.V - market.C * distributions.mrl(hyperexp, 1.5)
    assert u_type2(market, hyperexp, 1, 0.5, posterior) == pytest.approx(max(expected, 0.0), rel=1e-9)


def test_type2_margin_counts_waiters_ahead(market, hyperexp):
    one = type2_margin(market, hyperexp, 1, point_mass(1.0, n=1, t=0.5))
    two = type2_margin(market, hyperexp, 2, point_mass(1.0, n=2, t=0.5))
    assert one - two == pytest.approx(market.C * hyperexp.mean)


def test_u_type2_without_evidence(market, hyperexp):
    empty = AgePosterior(n=1, t=0.0, ages=np.array([0.0, 1.0]), density=np.zeros(2), normalizer=0.0)
    with pytest.raises(NullEventError, match="unreachable conditioning event"):
        u_type2(market, hyperexp, 1, 0.0, empty)


def test_u_type2_rejects_mismatched_posterior(market, hyperexp):
    with pytest.raises(ValueError):
        u_type2(market, hyperexp, 1, 0.7, point_mass(1.0, n=1, t=0.5))


def test_type1_curve_is_nonincreasing(market, hyperexp):
    curve = utility_curve(market, hyperexp, 1, CustomerType.TYPE_I, np.linspace(0.0, 12.0, 40))
    values = curve.values.values
    assert np.all(np.diff(values) <= 1e-12)
    assert values[0] == pytest.approx(3.65)
    assert values[-1] == 0.0


def test_type2_curve_needs_steady_state(market, hyperexp):
    with pytest.raises(ValueError):
        utility_curve(market, hyperexp, 1, CustomerType.TYPE_II, np.linspace(0.0, 1.0, 5))


def test_type2_curve_is_nonincreasing(market, hyperexp, reference_profile):
    steady = solve_steady_state(reference_profile, market, hyperexp, n_points=120)
    times = np.linspace(0.0, 10.0, 25)
    curve = utility_curve(
        market, hyperexp, 1, CustomerType.TYPE_II, times, steady=steady, profile=reference_profile,
    )
    values = curve.values.values
    # times past S1 are dropped
    assert curve.values.points[-1] <= reference_profile.s(1)
    assert np.all(np.diff(values) <= 1e-9)
    assert values[0] > 0.0
