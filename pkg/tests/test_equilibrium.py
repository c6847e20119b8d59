import math

import numpy as np
import pytest

from app.core.errors import ModelContractError
from app.models.market import MarketParams
from app.models.simulation import Deviation, SimConfig
from app.models.state import Likelihood, Tolerance
from app.services import simulator
from app.services.age_posterior import posterior_age
from app.services.distributions import Exponential, Pareto, Uniform
from app.services.equilibrium import (
    SolverContext,
    coarse_n_max,
    solve_equilibrium,
    solve_n_max,
    solve_t_threshold,
    t_sequence,
    verify_best_response,
)
from app.services.steady_state import solve_steady_state
from app.services.utility import g_value, type2_margin
from tests.conftest import SMALL_GRID


def test_t1_matches_closed_form(market, hyperexp):
    # 0.0075 e^{-0.2t} = 3.6575 e^{-t}
    expected = math.log(3.6575 / 0.0075) / 0.8
    assert solve_t_threshold(market, hyperexp, 1) == pytest.approx(expected, abs=1e-2)
    assert expected == pytest.approx(7.737, abs=1e-3)


def test_t_sequence_is_decreasing(market, hyperexp):
    T = [solve_t_threshold(market, hyperexp, n) for n in range(1, 5)]
    assert all(b < a for a, b in zip(T, T[1:]))
    assert T[-1] > 0.0
    assert g_value(market, hyperexp, 4, 0.0) == pytest.approx(0.05)


def test_t_zero_when_joining_is_a_loss(market, hyperexp):
    assert solve_t_threshold(market, hyperexp, 5) == 0.0


def test_t_root_is_a_zero_of_g(market, hyperexp):
    for n in (1, 2, 3):
        t_n = solve_t_threshold(market, hyperexp, n)
        assert abs(g_value(market, hyperexp, n, t_n)) < 1e-2


def test_t_sequence_ignores_arrival_rate(hyperexp):
    base = t_sequence(MarketParams(lam=1.0, V=4.85, C=1.0), hyperexp, 5)
    for lam in (3.0, 10.0):
        assert t_sequence(MarketParams(lam=lam, V=4.85, C=1.0), hyperexp, 5) == base


def test_t_sequence_scale_invariant(market, hyperexp):
    assert t_sequence(market.scaled(2.0), hyperexp, 5) == pytest.approx(t_sequence(market, hyperexp, 5), abs=1e-9)


def test_exponential_type_one_never_leaves():
    params = MarketParams(lam=1.0, V=10.0, C=1.0)
    assert math.isinf(solve_t_threshold(params, Exponential(1.0), 1))


def test_pareto_threshold():
    params = MarketParams(lam=1.0, V=10.0, C=1.0)
    # mrl(t) = 2t on the support
    assert solve_t_threshold(params, Pareto(1.5, 1.0), 1) == pytest.approx(5.0, abs=1e-2)


def test_uniform_is_rejected():
    params = MarketParams(lam=1.0, V=10.0, C=1.0)
    with pytest.raises(ModelContractError):
        solve_t_threshold(params, Uniform(0.0, 2.0), 1)
    with pytest.raises(ModelContractError):
        solve_equilibrium(params, Uniform(0.0, 2.0))


def test_coarse_bound(market, hyperexp):
    assert coarse_n_max(market, hyperexp) == 5


def test_exponential_equilibrium_is_fully_patient():
    params = MarketParams(lam=0.5, V=2.5, C=1.0)
    model = Exponential(1.0)
    context = SolverContext(grid_points=SMALL_GRID)
    profile = solve_equilibrium(params, model, context=context)
    assert profile.n_max == 3
    assert all(math.isinf(v) for v in profile.T + profile.S)
    assert not profile.simulation_required
    assert context.steady_solves > 0


def test_exponential_balking_point():
    # V - C n / mu <= 0 first at n = 2
    params = MarketParams(lam=0.5, V=1.5, C=1.0)
    context = SolverContext(grid_points=SMALL_GRID)
    assert solve_n_max(params, Exponential(1.0), context) == 2


def test_no_deviations_no_results(market, hyperexp, reference_profile):
    report = verify_best_response(reference_profile, market, hyperexp, sim_budget=1000, deviations=[])
    assert report.results == []
    assert report.improving == []


def test_single_waiter_certificates(hyperexp):
    # the coarse bound stops the search at n_max = 2, so only S1 is solved
    params = MarketParams(lam=3.0, V=2.0, C=1.0)
    profile = solve_equilibrium(params, hyperexp, context=SolverContext(grid_points=SMALL_GRID))
    assert profile.n_max == 2
    assert 0.0 < profile.S[0] < math.inf
    assert abs(profile.diagnostics["U1_at_S1"]) <= 5e-3
    assert profile.diagnostics["n_max_source"] == "searched"


def test_t_root_certificate(market, hyperexp):
    t_1 = solve_t_threshold(market, hyperexp, 1, Tolerance(eps_root=1e-6))
    assert abs(g_value(market, hyperexp, 1, t_1)) <= 1e-3


def test_forced_n_max_skips_the_search(hyperexp):
    params = MarketParams(lam=3.0, V=2.0, C=1.0)
    context = SolverContext(grid_points=SMALL_GRID, n_max=1)
    profile = solve_equilibrium(params, hyperexp, context=context)
    assert profile.n_max == 1
    assert profile.S == [] and profile.T == []
    assert list(context.stages) == [1]
    assert profile.diagnostics["n_max_source"] == "forced"


def test_forced_n_max_beyond_analytic_range(market, hyperexp):
    profile = solve_equilibrium(market, hyperexp, context=SolverContext(grid_points=SMALL_GRID, n_max=4))
    assert profile.simulation_required
    assert len(profile.T) == 2
    assert all(math.isnan(s) for s in profile.S)


def test_heavy_tail_balks_immediately():
    # Pareto with shape 1.5 has no second moment: the stationary residual is unbounded
    params = MarketParams(lam=0.5, V=5.0, C=1.0)
    context = SolverContext(grid_points=SMALL_GRID)
    profile = solve_equilibrium(params, Pareto(1.5, 1.0), context=context)
    assert profile.n_max == 1
    assert context.stages[1].balk_margin < 0.0


@pytest.mark.slow
def test_reference_search_leaves_analytic_range(market, hyperexp):
    context = SolverContext()
    profile = solve_equilibrium(market, hyperexp, context=context)
    assert profile.n_max == 4
    assert profile.simulation_required
    assert profile.T[0] == pytest.approx(7.737, abs=1e-2)
    # arrivals finding three still expect a clear gain under the n_max = 3 stage
    assert context.stages[3].balk_margin > 0.3


@pytest.mark.slow
def test_reference_equilibrium(market, hyperexp):
    profile = solve_equilibrium(market, hyperexp, context=SolverContext(n_max=3))
    assert profile.n_max == 3
    assert profile.T[0] == pytest.approx(7.737, abs=1e-2)
    assert profile.S[0] > profile.S[1] > 0.0
    assert profile.S[0] == pytest.approx(6.72, abs=0.1)
    assert profile.S[1] == pytest.approx(3.91, abs=0.15)
    assert abs(profile.diagnostics["U1_at_S1"]) <= 5e-3
    assert abs(profile.diagnostics["U2_at_S2"]) <= 5e-3
    assert abs(profile.diagnostics["G1_at_T1"]) <= 1e-3
    assert profile.is_monotone()
    assert profile.S[0] <= profile.T[0]


@pytest.mark.slow
def test_steady_state_converges_with_the_grid(market, hyperexp, reference_profile):
    pi, margin = [], []
    for points in (200, 400, 800):
        steady = solve_steady_state(reference_profile, market, hyperexp, n_points=points)
        posterior = posterior_age(1, reference_profile.s(1), steady, reference_profile, market, hyperexp)
        pi.append(steady.pi_n)
        margin.append(type2_margin(market, hyperexp, 1, posterior))
    coarse, fine = np.max(np.abs(pi[1] - pi[0])), np.max(np.abs(pi[2] - pi[1]))
    assert fine <= coarse + 1e-5
    assert abs(margin[2] - margin[1]) <= abs(margin[1] - margin[0]) + 1e-5


@pytest.mark.slow
def test_occupancy_matches_simulation(market, hyperexp, reference_profile):
    steady = solve_steady_state(reference_profile, market, hyperexp, n_points=400)
    sim = SimConfig(params=market, model=hyperexp, profile=reference_profile, horizon_events=3_000_000, seed=13)
    estimate = simulator.run(sim)
    for e, p in zip(estimate.pi_hat, steady.pi_n):
        assert e.within(float(p), 3.0), (e, p)


@pytest.mark.slow
def test_survival_equilibrium_is_a_best_response(market, hyperexp):
    context = SolverContext(grid_points=200, mode=Likelihood.SURVIVAL, n_max=3)
    profile = solve_equilibrium(market, hyperexp, context=context)
    deviations = [
        Deviation(coordinate=f"{kind}{n}", value=max(value + step, 0.0))
        for kind, values in (("S", profile.S), ("T", profile.T))
        for n, value in enumerate(values, start=1)
        for step in (-0.5, 0.5)
    ]
    report = verify_best_response(
        profile, market, hyperexp, sim_budget=2_000_000, deviations=deviations, seed=21, tag_rate=0.05,
    )
    assert len(report.results) == 6
    assert report.improving == []


@pytest.mark.slow
def test_heavy_tail_forced_profile_is_finite():
    params = MarketParams(lam=0.5, V=5.0, C=1.0)
    profile = solve_equilibrium(params, Pareto(1.5, 1.0), context=SolverContext(grid_points=200, n_max=3))
    assert profile.T[0] == pytest.approx(2.5, abs=1e-2)
    assert all(math.isfinite(v) and v >= 0.0 for v in profile.T + profile.S)


@pytest.mark.slow
def test_equilibrium_scale_invariant(market, hyperexp):
    a = solve_equilibrium(market, hyperexp, context=SolverContext(grid_points=150, n_max=3))
    b = solve_equilibrium(market.scaled(2.0), hyperexp, context=SolverContext(grid_points=150, n_max=3))
    assert a.n_max == b.n_max
    assert a.S == pytest.approx(b.S, abs=2e-3)
