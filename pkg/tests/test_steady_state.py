import math

import numpy as np
import pytest

from app.core.errors import NumericalError
from app.models.market import MarketParams, ThresholdProfile
from app.models.state import StateStructure
from app.services import numerics
from app.services.distributions import Exponential
from app.services.steady_state import (
    ChainKernel,
    cycle_survival,
    density_p0a,
    g_factor,
    solve_steady_state,
    structure_count,
    structures,
)
from tests.conftest import truncated_geometric


def test_structure_count():
    for n in range(1, 11):
        assert structure_count(n) == n * (n + 1) // 2
    with pytest.raises(ValueError):
        structure_count(0)


def test_structures_visited():
    assert len(structures(2)) == structure_count(2)
    assert len(structures(3)) == structure_count(3)
    assert StateStructure(3, 2) not in structures(3)
    assert len(structures(1)) == 2


def test_cycle_survival_without_return():
    d = np.array([0.0, 0.5, 1.9])
    assert np.allclose(cycle_survival(d, 2.0, 3.0), np.exp(-3.0 * d))
    assert np.allclose(cycle_survival(d, math.inf, 3.0), np.exp(-3.0 * d))


def test_cycle_survival_one_cycle():
    lam, s, d = 3.0, 2.0, 2.7
    expected = math.exp(-lam * d) + lam * (d - s) * math.exp(-lam * (d - s))
    assert float(cycle_survival(d, s, lam)) == pytest.approx(expected, rel=1e-12)


def test_g_factor_single_customer(market, hyperexp, reference_profile):
    value = g_factor(0, 1, 0, 0.5, 0.0, reference_profile, market, hyperexp)
    assert value == pytest.approx(math.exp(-1.5) * float(hyperexp.sf(0.5)), rel=1e-12)


def test_g_factor_full_system_is_survival_ratio(market, hyperexp, reference_profile):
    value = g_factor(0, 3, 0, 2.0, 0.5, reference_profile, market, hyperexp)
    assert value == pytest.approx(float(hyperexp.sf(2.0) / hyperexp.sf(1.5)), rel=1e-12)


def test_g_factor_illegal_structure(market, hyperexp, reference_profile):
    with pytest.raises(ValueError):
        g_factor(2, 1, 0, 0.5, 0.0, reference_profile, market, hyperexp)
    with pytest.raises(ValueError):
        g_factor(2, 3, 0, 0.5, 0.1, reference_profile, market, hyperexp)


def test_density_p0a_starts_at_p00(market, hyperexp, reference_profile):
    assert float(density_p0a(0.0, 0.7, reference_profile, market, hyperexp)) == pytest.approx(0.7)


def test_kernel_limits(market, hyperexp):
    with pytest.raises(NumericalError):
        ChainKernel(ThresholdProfile(n_max=4, T=[1.0, 0.5], S=[1.0, 0.5, 0.2]), market, hyperexp)


def test_single_server_loss_system(hyperexp):
    params = MarketParams(lam=3.0, V=4.85, C=1.0)
    steady = solve_steady_state(ThresholdProfile(n_max=1), params, hyperexp, n_points=300)
    rho = params.lam * hyperexp.mean
    assert steady.pi0 == pytest.approx(1.0 / (1.0 + rho), abs=2e-3)
    assert steady.total_mass == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("n_max", [2, 3])
def test_patient_exponential_queue_is_truncated_geometric(n_max):
    params = MarketParams(lam=1.0, V=10.0, C=1.0)
    model = Exponential(2.0)
    profile = ThresholdProfile(n_max=n_max, T=[math.inf] * (n_max - 2), S=[math.inf] * (n_max - 1))
    steady = solve_steady_state(profile, params, model, n_points=400)
    assert np.allclose(steady.pi_n, truncated_geometric(0.5, n_max), atol=5e-3)
    assert abs(steady.residuals["restart_flux"]) <= 1e-2 * steady.p00
    assert abs(steady.residuals["busy_mass_identity"]) <= 5e-3


def test_reference_profile_balances(market, hyperexp, reference_profile):
    steady = solve_steady_state(reference_profile, market, hyperexp, n_points=400)
    assert steady.total_mass == pytest.approx(1.0, abs=1e-4)
    assert 0.0 < steady.pi0 < 1.0
    assert steady.p10 > 0.0
    assert abs(steady.residuals["empty_balance"]) <= 1e-9
    assert abs(steady.residuals["reentry_flux"]) <= 1e-9
    assert abs(steady.residuals["busy_mass_identity"]) <= 2e-2
    for density in steady.densities.values():
        assert np.all(density >= 0.0)
    # the structures with n present carry pi_n
    for n in (1, 2, 3):
        mass = float(numerics.trapezoid(steady.age_mass(n), steady.ages))
        assert mass == pytest.approx(steady.pi_n[n], abs=2e-2)


def test_abandonment_frees_the_server(market, hyperexp):
    patient = solve_steady_state(ThresholdProfile(n_max=2, S=[math.inf]), market, hyperexp, n_points=300)
    impatient = solve_steady_state(ThresholdProfile(n_max=2, S=[0.5]), market, hyperexp, n_points=300)
    assert impatient.pi_n[2] < patient.pi_n[2]
