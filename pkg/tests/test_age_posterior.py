import math

import numpy as np
import pytest

from app.core.errors import NullEventError
from app.models.market import MarketParams, ThresholdProfile
from app.models.state import ArrivalMixture, Likelihood, SteadyState, StateStructure
from app.services import numerics
from app.services.age_posterior import (
    age_density_given_n,
    arrival_mixture,
    arrival_window,
    expected_residual,
    posterior_age,
    prior_posterior,
    y_density_given_age_n1,
    y_density_given_age_n2,
)
from app.services.steady_state import solve_steady_state

GRID = 200


@pytest.fixture
def exp_setup(exp1):
    params = MarketParams(lam=1.0, V=4.0, C=1.0)
    profile = ThresholdProfile(n_max=2, S=[2.0])
    return params, profile, exp1, solve_steady_state(profile, params, exp1, n_points=GRID)


@pytest.fixture
def reference_steady(market, hyperexp, reference_profile):
    return solve_steady_state(reference_profile, market, hyperexp, n_points=GRID)


def test_age_density_normalizes(reference_steady):
    for n in (1, 2, 3):
        prior = age_density_given_n(n, reference_steady)
        assert numerics.trapezoid(prior.values, prior.points) == pytest.approx(1.0, abs=1e-9)
        assert np.all(prior.values >= 0.0)


def test_age_density_null_event():
    ages = np.linspace(0.0, 1.0, 5)
    steady = SteadyState(
        n_max=2, ages=ages, pi0=1.0, p00=0.0, p10=0.0,
        densities={StateStructure(1, 0): np.zeros(5), StateStructure(2, 0): np.zeros(5)},
        pi_n=np.array([1.0, 0.0, 0.0]),
    )
    with pytest.raises(NullEventError, match="conditioning on null event"):
        age_density_given_n(1, steady)


def test_exponential_posterior_equals_prior(exp_setup):
    params, profile, model, steady = exp_setup
    prior = age_density_given_n(1, steady)
    for t in (0.0, 1.0, 2.0):
        posterior = posterior_age(1, t, steady, profile, params, model)
        assert np.allclose(posterior.density, prior.values, rtol=1e-8, atol=1e-12)


def test_exponential_residual_is_memoryless(exp_setup):
    params, profile, model, steady = exp_setup
    for t in (0.0, 0.7, 1.9):
        posterior = posterior_age(1, t, steady, profile, params, model)
        assert expected_residual(posterior, t, model) == pytest.approx(1.0, abs=1e-9)


def test_exponential_wait_density_ignores_age(exp_setup):
    params, profile, model, _ = exp_setup
    ages = np.array([0.0, 0.5, 3.0])
    values = y_density_given_age_n1(0.8, ages, profile, params, model)
    assert np.allclose(values, values[0], rtol=1e-6)


def test_wait_density_integrates_to_one(market, hyperexp, reference_profile):
    a = 1.0
    ys = np.linspace(0.0, reference_profile.s(1), 2001)
    values = np.array([y_density_given_age_n1(float(y), a, reference_profile, market, hyperexp) for y in ys])
    assert numerics.trapezoid(values, ys) == pytest.approx(1.0, abs=2e-3)


def test_wait_density_zero_past_patience(market, hyperexp, reference_profile):
    assert y_density_given_age_n1(7.5, 1.0, reference_profile, market, hyperexp) == 0.0


def test_window_is_a_probability(market, hyperexp):
    window = arrival_window([0.0, 2.0, 10.0], math.inf, market.lam, hyperexp)
    assert np.all(window > 0.0) and np.all(window < 1.0)


def test_survival_likelihood_is_plain_survival(market, hyperexp, reference_profile):
    value = y_density_given_age_n1(0.5, 1.0, reference_profile, market, hyperexp, Likelihood.SURVIVAL)
    assert value == pytest.approx(float(hyperexp.sf(1.5) / hyperexp.sf(1.0)), rel=1e-12)


def test_type_one_branch_matches_single_customer_form(market, hyperexp, reference_profile):
    # T1 - a exceeds S2, so only S2 limits the wait
    mixture = ArrivalMixture(prob_I1=1.0, w1_points=np.zeros(1), w1_weights=np.ones(1))
    two = y_density_given_age_n2(0.4, 1.0, mixture, reference_profile, market, hyperexp)
    one = y_density_given_age_n1(0.4, 1.0, ThresholdProfile(n_max=2, S=[3.13]), market, hyperexp)
    assert two == pytest.approx(one, rel=1e-9)


def test_type_one_waiter_past_patience(market, hyperexp, reference_profile):
    mixture = ArrivalMixture(prob_I1=0.5, w1_points=np.zeros(1), w1_weights=np.ones(1))
    with pytest.raises(NullEventError, match="inconsistent state"):
        y_density_given_age_n2(0.1, 8.0, mixture, reference_profile, market, hyperexp)


def test_arrival_mixture_probability(market, hyperexp, reference_profile, reference_steady):
    early = arrival_mixture(1.0, reference_steady, reference_profile, market, hyperexp)
    late = arrival_mixture(9.0, reference_steady, reference_profile, market, hyperexp)
    assert 0.0 < early.prob_I1 < 1.0
    # past T1 the first waiter cannot be type I
    assert late.prob_I1 == 0.0


@pytest.mark.parametrize("n,t", [(1, 0.0), (1, 3.0), (1, 7.2), (2, 0.0), (2, 1.5)])
def test_posterior_normalizes(market, hyperexp, reference_profile, reference_steady, n, t):
    posterior = posterior_age(n, t, reference_steady, reference_profile, market, hyperexp)
    assert numerics.trapezoid(posterior.density, posterior.ages) == pytest.approx(1.0, abs=1e-9)
    assert np.all(posterior.density >= 0.0)
    prior = age_density_given_n(n, reference_steady)
    assert np.all(posterior.density[prior.values == 0.0] == 0.0)


def test_posterior_beyond_patience(market, hyperexp, reference_profile, reference_steady):
    with pytest.raises(NullEventError, match="posterior undefined"):
        posterior_age(1, 7.3, reference_steady, reference_profile, market, hyperexp)


def test_prior_posterior_has_no_update(reference_steady):
    posterior = prior_posterior(3, reference_steady)
    assert posterior.t == 0.0
    assert np.allclose(posterior.density, age_density_given_n(3, reference_steady).values)


@pytest.mark.parametrize("mode", list(Likelihood))
def test_posterior_is_continuous_at_zero_wait(market, hyperexp, reference_profile, reference_steady, mode):
    at_zero = posterior_age(2, 0.0, reference_steady, reference_profile, market, hyperexp, mode)
    just_after = posterior_age(2, 1e-6, reference_steady, reference_profile, market, hyperexp, mode)
    assert np.all(np.isfinite(at_zero.density))
    assert np.allclose(at_zero.density, just_after.density, rtol=1e-4, atol=1e-8)
    assert expected_residual(at_zero, 0.0, hyperexp) == pytest.approx(
        expected_residual(just_after, 1e-6, hyperexp), abs=1e-4
    )


@pytest.mark.parametrize("a", [0.5, 2.0, 7.5, 9.0])
def test_two_present_wait_density_integrates_to_one(market, hyperexp, reference_profile, reference_steady, a):
    mixture = arrival_mixture(a, reference_steady, reference_profile, market, hyperexp)
    assert np.sum(mixture.w1_weights) == pytest.approx(1.0, abs=1e-9)
    ys = np.linspace(0.0, reference_profile.s(2), 4001)
    values = np.array([
        y_density_given_age_n2(float(y), a, mixture, reference_profile, market, hyperexp) for y in ys
    ])
    assert np.all(np.isfinite(values))
    assert numerics.trapezoid(values, ys) == pytest.approx(1.0, abs=3e-3)


def test_mixture_cells_stay_below_patience(market, hyperexp, reference_profile, reference_steady):
    mixture = arrival_mixture(9.0, reference_steady, reference_profile, market, hyperexp)
    assert np.all(mixture.w1_points < reference_profile.s(1))
    assert np.all(mixture.w1_weights >= 0.0)


def test_survival_residual_grows_with_the_wait(market, hyperexp):
    # without finite patience ahead the survival weights shift the posterior to older ages
    profile = ThresholdProfile(n_max=3, T=[math.inf], S=[math.inf, 3.13])
    steady = solve_steady_state(profile, market, hyperexp, n_points=GRID)
    residuals = [
        expected_residual(posterior_age(2, t, steady, profile, market, hyperexp, Likelihood.SURVIVAL), t, hyperexp)
        for t in np.linspace(0.0, 3.13, 12)
    ]
    assert np.all(np.diff(residuals) >= -1e-9)


def test_inspector_residual_grows_with_the_wait(market, hyperexp, reference_profile, reference_steady):
    residuals = [
        expected_residual(posterior_age(1, t, reference_steady, reference_profile, market, hyperexp), t, hyperexp)
        for t in np.linspace(0.0, reference_profile.s(1), 12)
    ]
    assert np.all(np.diff(residuals) >= -1e-9)
