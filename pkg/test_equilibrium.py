"""
Tests for the x-hat path solver and the equilibrium built on it.

The two reference instances share O = 2 (y_A = 1000, y_B = 4e6, p_A = 2000):
a full-participation one with g_L = 1000 and a partial-participation one
with g_L = 0.9 * g-hat_H.
"""

import math
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from equilibrium import (MAX_OPPORTUNITY, ParticipationCase, XhatPath, amount_ddf, d_star,
                         expected_profit, find_z_hat, gas_ddf, k_kernel, participation_margin,
                         path_residuals, phi_star, q_hat, response_h, solution_from_dict,
                         solution_to_dict, solve_equilibrium, solve_xhat, threshold_base_gas_fee,
                         threshold_liquidity, v_fun)
from errors import (BracketMissingError, InvalidArgumentError, NoTradeError, NonConvergenceError,
                    OutOfSupportError, UnsupportedOpportunityError)
from market_core import (MarketParams, PoolState, derived_quantities, first_mover_advantage,
                         first_mover_profit)
from settings import SolverConfig, load_config, solver_config_from

RESIDUAL_TOLERANCE = SolverConfig().residual_tolerance


def o2_market(base_gas_fee=0.0):
    return MarketParams(PoolState(1000.0, 4_000_000.0, 0.0), 2000.0, 1.0, base_gas_fee)


G_HIGH = derived_quantities(o2_market()).max_gas_fee


@pytest.fixture(scope='module')
def full_sol():
    return solve_equilibrium(o2_market(1000.0))


@pytest.fixture(scope='module')
def partial_sol():
    return solve_equilibrium(o2_market(0.9 * G_HIGH))


@pytest.fixture(params=['full', 'partial'])
def sol(request, full_sol, partial_sol):
    return full_sol if request.param == 'full' else partial_sol


# ------------------------------------------------------------- kernels

def test_q_hat_examples():
    assert q_hat(math.sqrt(2.0) - 1.0, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert q_hat(0.0, 2.0) == 0.5
    assert q_hat(0.2, 2.0) == pytest.approx(0.194444, abs=1e-6)


def test_k_kernel_examples():
    assert k_kernel(1.0, 1.0) == pytest.approx(30.0 / 72.0)
    assert k_kernel(0.0, 1.0) == pytest.approx(2.25)
    with pytest.raises(InvalidArgumentError):
        k_kernel(1.0, 0.0)


def test_k_kernel_is_positive():
    grid = np.linspace(1e-3, math.sqrt(3.0) - 1.0, 50)
    assert np.all(k_kernel(grid[:, None], grid[None, :]) > 0)


def test_v_fun_examples():
    assert v_fun(1.0) == 3.0
    assert v_fun(1e-3) > 5e5
    market = o2_market()
    x = np.linspace(0.01, 0.7, 20)
    y_a = market.pool.reserve_a
    np.testing.assert_allclose(v_fun(x) * first_mover_advantage(market, y_a * x, y_a * x),
                               market.liquidity_b, rtol=1e-10)
    with pytest.raises(InvalidArgumentError):
        v_fun(0.0)


def test_kernels_match_finite_difference_oracles():
    market = o2_market()
    y_a, liquidity = market.pool.reserve_a, market.liquidity_b
    rng = np.random.default_rng(11)
    x = rng.uniform(0.01, 0.7, 1000)
    x_bar = rng.uniform(0.01, 0.7, 1000)
    h = 1e-6 * y_a

    slope = (first_mover_profit(market, 0.0, y_a * x + h)
             - first_mover_profit(market, 0.0, y_a * x - h)) / (2 * h)
    np.testing.assert_allclose(y_a / liquidity * slope, q_hat(x, 2.0), rtol=1e-5, atol=1e-8)

    v_slope = (first_mover_advantage(market, y_a * x + h, y_a * x_bar)
               - first_mover_advantage(market, y_a * x - h, y_a * x_bar)) / (2 * h)
    diagonal = first_mover_advantage(market, y_a * x_bar, y_a * x_bar)
    np.testing.assert_allclose(y_a * v_slope / diagonal, k_kernel(x, x_bar), rtol=1e-5)


# ---------------------------------------------------------------- path

@pytest.mark.parametrize('opportunity', [1.2, 2.0, 3.0])
def test_path_starts_at_the_optimal_amount_and_decreases(opportunity):
    path = solve_xhat(opportunity)
    assert path.x[0] == math.sqrt(opportunity) - 1.0
    assert path.z[0] == 0.0
    assert np.all(np.diff(path.x) < 0)
    assert np.all(np.diff(path.z) > 0)
    assert path.cumulative_v[-1] >= 1.0


@pytest.mark.parametrize('opportunity', [1.2, 2.0, 3.0])
def test_path_passes_independent_requadrature(opportunity):
    residuals = path_residuals(solve_xhat(opportunity))
    assert residuals.max() <= 10 * RESIDUAL_TOLERANCE


@pytest.mark.slow
def test_path_converges_under_step_halving():
    config = SolverConfig()
    coarse = solve_xhat(2.0, config)
    fine = solve_xhat(2.0, config.refined(2.0))
    z = np.linspace(0.0, find_z_hat(coarse), 200)
    assert np.max(np.abs(coarse.x_at(z) - fine.x_at(z))) < 4 * config.residual_tolerance


def test_example_config_keeps_the_default_step_bound():
    example = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.example.json')
    config = solver_config_from(load_config(example))
    default = SolverConfig()
    assert config.max_step <= default.max_step
    # step halving must move x-hat by less than 4 * residual_tolerance
    assert default.max_step <= 5e-5


@pytest.mark.parametrize('opportunity', [1.0, 0.8, 3.5, math.nan])
def test_solve_xhat_rejects_unsupported_opportunity(opportunity):
    with pytest.raises(UnsupportedOpportunityError):
        solve_xhat(opportunity)


def test_solve_xhat_accepts_the_upper_bound():
    assert solve_xhat(MAX_OPPORTUNITY).opportunity == MAX_OPPORTUNITY


def test_node_cap_raises_with_partial_path():
    with pytest.raises(NonConvergenceError) as excinfo:
        solve_xhat(2.0, SolverConfig(max_nodes=10))
    partial = excinfo.value.partial_path
    assert len(partial) == 10
    assert partial.x[0] == math.sqrt(2.0) - 1.0


def test_z_hat_closes_the_unit_mass():
    path = solve_xhat(2.0)
    z_hat = find_z_hat(path)
    assert float(path.cumulative_v_at(z_hat)) == pytest.approx(1.0, abs=RESIDUAL_TOLERANCE)
    assert 0.0 < z_hat < path.z_end


def test_z_hat_needs_a_bracket():
    path = solve_xhat(2.0)
    k = int(np.searchsorted(path.cumulative_v, 0.5))
    short = XhatPath(path.z[:k], path.x[:k], path.cumulative_v[:k], path.opportunity,
                     path.max_residual, path.config)
    with pytest.raises(BracketMissingError):
        find_z_hat(short)


@pytest.mark.parametrize('opportunity', [1.5, 2.0, 2.5, 3.0])
def test_participation_margin_is_positive(opportunity):
    assert participation_margin(opportunity) > 0


# ---------------------------------------------------------- equilibrium

def test_full_participation_instance(full_sol):
    derived = full_sol.derived
    assert full_sol.case_tag is ParticipationCase.FULL
    assert full_sol.alpha_star == 1.0
    assert full_sol.g_h == pytest.approx(1000.0 + full_sol.liquidity_b * full_sol.z_hat)
    assert full_sol.expected_profit == pytest.approx(derived.max_gas_fee - full_sol.g_h)
    assert full_sol.expected_profit > 0
    assert expected_profit(full_sol) == pytest.approx(full_sol.expected_profit)


def test_partial_participation_instance(partial_sol):
    width = 0.1 * G_HIGH / partial_sol.liquidity_b
    assert partial_sol.case_tag is ParticipationCase.PARTIAL
    assert partial_sol.g_h == G_HIGH
    assert partial_sol.alpha_star == pytest.approx(float(partial_sol.path.cumulative_v_at(width)))
    assert 0.0 < partial_sol.alpha_star < 1.0
    assert partial_sol.expected_profit == 0.0
    assert expected_profit(partial_sol) == 0.0


def test_no_trade_when_base_fee_reaches_the_break_even_fee():
    with pytest.raises(NoTradeError, match='no-trade'):
        solve_equilibrium(o2_market(G_HIGH))


def test_solver_rejects_markets_without_opportunity():
    market = MarketParams(PoolState(1000.0, 2_000_000.0, 0.0), 2000.0, 1.0)
    with pytest.raises(UnsupportedOpportunityError):
        solve_equilibrium(market)


def test_case_boundary_is_continuous():
    threshold = threshold_base_gas_fee(o2_market())
    below = solve_equilibrium(o2_market(threshold * (1.0 - 1e-9)))
    above = solve_equilibrium(o2_market(threshold * (1.0 + 1e-9)))
    assert below.case_tag is ParticipationCase.FULL
    assert above.case_tag is ParticipationCase.PARTIAL
    assert abs(below.alpha_star - above.alpha_star) <= 1e-6
    assert abs(below.expected_profit - above.expected_profit) <= 1e-6 * G_HIGH

    at = solve_equilibrium(o2_market(threshold))
    assert at.alpha_star == pytest.approx(1.0, abs=1e-6)
    assert at.expected_profit == pytest.approx(0.0, abs=1e-6 * G_HIGH)


def test_reference_calibration_case_depends_on_opportunity():
    def market(opportunity):
        pool = PoolState(16_000.0, 48_033_495.0, 0.003)
        price_a = 48_033_495.0 / (opportunity * 16_000.0 * 1.003)
        return MarketParams(pool, price_a, 1.0, base_gas_fee=5.0)

    assert solve_equilibrium(market(1.001)).case_tag is ParticipationCase.PARTIAL
    assert solve_equilibrium(market(1.5)).case_tag is ParticipationCase.FULL


def test_threshold_liquidity_separates_the_cases():
    market = o2_market(50_000.0)
    l_star = threshold_liquidity(market)
    for factor, case in ((1.05, ParticipationCase.FULL), (0.95, ParticipationCase.PARTIAL)):
        pool = market.pool
        scaled = replace(market, pool=PoolState(pool.reserve_a * factor * l_star / 4e6,
                                                pool.reserve_b * factor * l_star / 4e6))
        assert solve_equilibrium(scaled).case_tag is case


# ------------------------------------------------------- strategy parts

def test_d_star_reaches_the_optimal_amount_at_the_top(sol):
    d_hat = sol.derived.optimal_amount
    assert d_star(sol, sol.g_h) == pytest.approx(d_hat, rel=1e-8)
    gas = np.linspace(sol.market.base_gas_fee, sol.g_h, 200)
    assert np.all(np.diff(d_star(sol, gas)) > 0)


def test_d_star_below_optimum_at_the_base_fee(partial_sol):
    assert d_star(partial_sol, partial_sol.market.base_gas_fee) < partial_sol.derived.optimal_amount


def test_strategy_rejects_gas_outside_support(sol):
    with pytest.raises(OutOfSupportError):
        d_star(sol, sol.g_h * 1.01 + 1.0)
    with pytest.raises(OutOfSupportError):
        phi_star(sol, sol.market.base_gas_fee * 0.5 - 1.0)


def test_phi_star_is_a_decreasing_density(sol):
    gas = np.linspace(sol.market.base_gas_fee, sol.g_h, 10_000)
    density = phi_star(sol, gas)
    assert trapezoid(density, gas) == pytest.approx(1.0, abs=1e-4)
    coarse = phi_star(sol, np.linspace(sol.market.base_gas_fee, sol.g_h, 200))
    assert np.all(np.diff(coarse) < 0)


def test_phi_star_inverts_the_first_mover_advantage(sol):
    gas = np.linspace(sol.market.base_gas_fee, sol.g_h, 50)
    amounts = d_star(sol, gas)
    product = phi_star(sol, gas) * sol.alpha_star * first_mover_advantage(sol.market, amounts, amounts)
    np.testing.assert_allclose(product, 1.0, rtol=1e-8)


def test_gas_ddf_boundaries(sol):
    assert gas_ddf(sol, 0.0) == pytest.approx(sol.alpha_star)
    assert gas_ddf(sol, sol.g_h) == 0.0
    values = gas_ddf(sol, np.linspace(0.0, 1.1 * sol.derived.max_gas_fee, 500))
    assert np.all(np.diff(values) <= 0)


def test_gas_ddf_matches_path_mass_in_full_participation(full_sol):
    sol = full_sol
    g_low = sol.market.base_gas_fee
    gas = np.linspace(g_low, sol.g_h, 101)[:-1]
    z = np.minimum((g_low + sol.liquidity_b * sol.z_hat - gas) / sol.liquidity_b, sol.z_hat)
    np.testing.assert_allclose(gas_ddf(sol, gas), sol.path.cumulative_v_at(z), atol=1e-6)


def test_gas_ddf_matches_density_quadrature(sol):
    g = sol.market.base_gas_fee + 0.3 * (sol.g_h - sol.market.base_gas_fee)
    upper = np.linspace(g, sol.g_h, 10_000)
    assert gas_ddf(sol, g) == pytest.approx(sol.alpha_star * trapezoid(phi_star(sol, upper), upper),
                                            abs=1e-4)


def test_amount_ddf_boundaries(sol):
    x0 = math.sqrt(sol.derived.opportunity) - 1.0
    assert amount_ddf(sol, x0) == 0.0
    values = amount_ddf(sol, np.linspace(1e-6, x0, 200))
    assert np.all(np.diff(values) <= 0)
    with pytest.raises(InvalidArgumentError):
        amount_ddf(sol, 0.0)


def test_amount_ddf_totals_the_trading_probability(partial_sol):
    assert amount_ddf(partial_sol, 1e-6) == pytest.approx(partial_sol.alpha_star)


# ------------------------------------------------------------ response

def test_response_at_the_top_of_the_support(sol):
    value = sol.derived.max_gas_fee - sol.g_h
    assert response_h(sol, sol.g_h, sol.derived.optimal_amount) == pytest.approx(
        value, abs=1e-6 * sol.derived.max_gas_fee)


def test_response_is_flat_along_the_equilibrium_path(sol):
    value = sol.derived.max_gas_fee - sol.g_h
    g_low = sol.market.base_gas_fee
    tolerance = 1e-4 * max(sol.derived.max_gas_fee - g_low, sol.liquidity_b * 1e-6)
    gas = np.linspace(g_low, sol.g_h, 100)
    for g, d in zip(gas, d_star(sol, gas)):
        assert abs(response_h(sol, g, d) - value) <= tolerance


def test_equilibrium_amount_is_the_best_reply(sol):
    d_hat = sol.derived.optimal_amount
    slack = 1e-6 * sol.derived.max_gas_fee
    for g in np.linspace(sol.market.base_gas_fee, sol.g_h, 7):
        on_path = response_h(sol, g, float(d_star(sol, g)))
        for d in np.linspace(0.0, d_hat, 25):
            assert response_h(sol, g, d) <= on_path + slack


def test_response_rejects_amounts_above_the_optimum(sol):
    with pytest.raises(InvalidArgumentError):
        response_h(sol, sol.g_h, 1.01 * sol.derived.optimal_amount)


# ---------------------------------------------------------- persistence

def test_solution_document_restores_the_strategy(full_sol):
    restored = solution_from_dict(solution_to_dict(full_sol))
    assert restored.case_tag is full_sol.case_tag
    assert restored.alpha_star == full_sol.alpha_star
    assert restored.g_h == full_sol.g_h
    gas = np.linspace(0.0, full_sol.g_h, 50)
    np.testing.assert_array_equal(gas_ddf(restored, gas), gas_ddf(full_sol, gas))


def test_malformed_solution_document():
    with pytest.raises(InvalidArgumentError):
        solution_from_dict({'case': 'FullParticipation'})
