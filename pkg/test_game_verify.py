"""
Tests for the equilibrium checks: pure payoffs, sampling, Monte Carlo,
the deviation gap and the fictitious-play oracle.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from equilibrium import (ParticipationCase, d_star, gas_ddf, solve_equilibrium,
                         threshold_base_gas_fee)
from errors import InvalidArgumentError, UnsupportedOpportunityError
from game_verify import (NO_TRADE, Action, TieWinner, best_deviation_gap, build_payoff_matrix,
                         discretized_game_oracle, fictitious_play_oracle, flatness_deviation,
                         monte_carlo_payoff, pure_payoff, sample_action, sample_actions)
from market_core import (MarketParams, PoolState, derived_quantities, first_mover_advantage,
                         first_mover_profit, second_mover_profit)

MC_SAMPLES = 100_000


def o2_market(base_gas_fee=0.0):
    return MarketParams(PoolState(1000.0, 4_000_000.0, 0.0), 2000.0, 1.0, base_gas_fee)


DERIVED = derived_quantities(o2_market())
G_HIGH, D_HAT = DERIVED.max_gas_fee, DERIVED.optimal_amount


@pytest.fixture(scope='module')
def full_sol():
    return solve_equilibrium(o2_market(1000.0))


@pytest.fixture(scope='module')
def partial_sol():
    return solve_equilibrium(o2_market(0.9 * G_HIGH))


@pytest.fixture(params=['full', 'partial'])
def sol(request, full_sol, partial_sol):
    return full_sol if request.param == 'full' else partial_sol


# --------------------------------------------------------- pure payoffs

def test_pure_payoff_cases():
    market = o2_market(5.0)
    high = Action(True, 10.0, 200.0)
    low = Action(True, 5.0, 300.0)
    assert pure_payoff(market, NO_TRADE, high, TieWinner.ME) == 0.0
    assert pure_payoff(market, high, low, TieWinner.THEM) == pytest.approx(
        first_mover_profit(market, 10.0, 200.0))
    assert pure_payoff(market, high, NO_TRADE, TieWinner.THEM) == pytest.approx(
        first_mover_profit(market, 10.0, 200.0))
    assert pure_payoff(market, low, high, TieWinner.ME) == pytest.approx(
        second_mover_profit(market, 5.0, 300.0, 200.0))


def test_tie_average_is_half_first_half_second():
    market = o2_market(5.0)
    mine, theirs = Action(True, 7.0, 150.0), Action(True, 7.0, 250.0)
    average = 0.5 * (pure_payoff(market, mine, theirs, TieWinner.ME)
                     + pure_payoff(market, mine, theirs, TieWinner.THEM))
    expected = (first_mover_profit(market, 7.0, 150.0)
                - 0.5 * first_mover_advantage(market, 150.0, 250.0))
    assert average == pytest.approx(expected)


def test_first_minus_second_is_the_first_mover_advantage():
    market = o2_market(5.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        gas = rng.uniform(5.0, G_HIGH, 2)
        amounts = rng.uniform(1.0, D_HAT, 2)
        first = pure_payoff(market, Action(True, max(gas), amounts[0]),
                            Action(True, min(gas), amounts[1]), TieWinner.ME)
        second = pure_payoff(market, Action(True, min(gas), amounts[0]),
                             Action(True, max(gas), amounts[1]), TieWinner.ME)
        gas_gap = max(gas) - min(gas)
        assert first - second + gas_gap == pytest.approx(
            first_mover_advantage(market, amounts[0], amounts[1]), rel=1e-9)


def test_pure_payoff_rejects_out_of_range_actions():
    market = o2_market(5.0)
    with pytest.raises(InvalidArgumentError):
        pure_payoff(market, Action(True, 1.0, 100.0), NO_TRADE, TieWinner.ME)
    with pytest.raises(InvalidArgumentError):
        pure_payoff(market, Action(True, 10.0, 2 * D_HAT), NO_TRADE, TieWinner.ME)


# ------------------------------------------------------------- sampling

def test_trade_frequency_matches_alpha(partial_sol):
    trades, _, _ = sample_actions(partial_sol, MC_SAMPLES, rng_seed=1)
    alpha = partial_sol.alpha_star
    bound = 3 * math.sqrt(alpha * (1 - alpha) / MC_SAMPLES)
    assert abs(trades.mean() - alpha) <= bound


def test_sampled_gas_fees_follow_the_ddf(sol):
    trades, gas, _ = sample_actions(sol, MC_SAMPLES, rng_seed=2)
    g_low = sol.market.base_gas_fee
    band = 1.63 / math.sqrt(MC_SAMPLES)
    for g in np.linspace(g_low, sol.g_h, 12)[1:-1]:
        empirical = float(np.mean(trades & (gas > g)))
        assert abs(empirical - gas_ddf(sol, g)) <= band


def test_sampled_amounts_follow_the_strategy(sol):
    trades, gas, amount = sample_actions(sol, 5_000, rng_seed=3)
    np.testing.assert_allclose(amount[trades], d_star(sol, gas[trades]), rtol=1e-8)
    assert np.all(amount[~trades] == 0.0)


def test_sample_action_is_deterministic(partial_sol):
    assert sample_action(partial_sol, 42) == sample_action(partial_sol, 42)
    action = sample_action(partial_sol, 42)
    if action.trades:
        assert partial_sol.market.base_gas_fee <= action.gas_fee <= partial_sol.g_h


# ---------------------------------------------------------- Monte Carlo

def test_monte_carlo_matches_expected_profit(sol):
    report = monte_carlo_payoff(sol, MC_SAMPLES, rng_seed=2024)
    assert report.sample_count == MC_SAMPLES
    assert abs(report.mean_payoff - sol.expected_profit) <= 3 * report.std_error
    assert report.tie_count == 0
    assert 0.0 <= report.first_mover_fraction <= 1.0


def test_monte_carlo_is_reproducible_across_worker_counts(partial_sol):
    one = monte_carlo_payoff(partial_sol, 60_000, rng_seed=9, batch_size=10_000, workers=1)
    four = monte_carlo_payoff(partial_sol, 60_000, rng_seed=9, batch_size=10_000, workers=4)
    assert one == four
    assert monte_carlo_payoff(partial_sol, 60_000, rng_seed=10, batch_size=10_000) != one


def test_monte_carlo_needs_samples(partial_sol):
    with pytest.raises(InvalidArgumentError):
        monte_carlo_payoff(partial_sol, 0, rng_seed=0)


# ------------------------------------------------------- deviation gap

def test_solver_output_has_no_profitable_deviation(sol):
    assert flatness_deviation(sol) <= 1e-4 * max(G_HIGH - sol.market.base_gas_fee,
                                                  sol.liquidity_b * 1e-6)
    gap = best_deviation_gap(sol, 200, 200)
    assert 0.0 <= gap <= 1e-3 * G_HIGH


def test_corrupted_alpha_is_detected(full_sol):
    corrupted = replace(full_sol, alpha_star=1.1 * full_sol.alpha_star)
    assert best_deviation_gap(corrupted, 200, 200) > 1e-2 * G_HIGH


def test_not_trading_never_beats_equilibrium(sol):
    assert pure_payoff(sol.market, NO_TRADE, NO_TRADE, TieWinner.ME) <= sol.expected_profit


def test_gap_needs_two_grid_points(partial_sol):
    with pytest.raises(InvalidArgumentError):
        best_deviation_gap(partial_sol, 1, 10)


# --------------------------------------------------------------- oracle

def test_payoff_matrix_agrees_with_pure_payoffs():
    market = o2_market(0.5 * G_HIGH)
    gas = np.array([0.5 * G_HIGH, 0.7 * G_HIGH, 0.9 * G_HIGH])
    amounts = np.array([0.3 * D_HAT, D_HAT])
    matrix = build_payoff_matrix(market, gas, amounts)
    actions = [NO_TRADE] + [Action(True, g, d) for g in gas for d in amounts]
    for i, mine in enumerate(actions):
        for j, theirs in enumerate(actions):
            expected = 0.5 * (pure_payoff(market, mine, theirs, TieWinner.ME)
                              + pure_payoff(market, mine, theirs, TieWinner.THEM))
            assert matrix[i, j] == pytest.approx(expected, abs=1e-9 * G_HIGH)


def test_two_action_game_matches_closed_form():
    market = o2_market(0.9 * G_HIGH)
    g_low = market.base_gas_fee
    alone = G_HIGH - g_low
    together = alone - 0.5 * first_mover_advantage(market, D_HAT, D_HAT)
    mixed = alone / (alone - together)

    result = fictitious_play_oracle(market, [g_low], [D_HAT], 20_000, rng_seed=5)
    sigma = result.strategy
    trade_value = sigma[0] * alone + sigma[1] * together
    assert result.regret == pytest.approx(max(trade_value, 0.0) - sigma[1] * trade_value,
                                          rel=1e-9, abs=1e-9 * G_HIGH)
    assert result.trade_probability == pytest.approx(mixed, abs=0.01)


def test_oracle_validates_its_inputs():
    with pytest.raises(InvalidArgumentError):
        discretized_game_oracle(o2_market(1000.0), 4, 10, 100, rng_seed=0)
    no_opportunity = MarketParams(PoolState(1000.0, 2_000_000.0, 0.0), 2000.0, 1.0)
    with pytest.raises(UnsupportedOpportunityError):
        discretized_game_oracle(no_opportunity, 10, 10, 100, rng_seed=0)


def test_oracle_is_deterministic():
    market = o2_market(0.9 * G_HIGH)
    first = discretized_game_oracle(market, 7, 5, 2_000, rng_seed=8)
    second = discretized_game_oracle(market, 7, 5, 2_000, rng_seed=8)
    np.testing.assert_array_equal(first.strategy, second.strategy)
    assert first.regret == second.regret
    assert first.regret >= 0.0


@pytest.fixture(scope='module')
def wide_partial_sol():
    # just above the participation threshold, where the gas support is widest
    sol = solve_equilibrium(o2_market(1.05 * threshold_base_gas_fee(o2_market())))
    assert sol.case_tag is ParticipationCase.PARTIAL
    return sol


@pytest.mark.slow
def test_fictitious_play_recovers_the_partial_equilibrium(wide_partial_sol):
    sol = wide_partial_sol
    result = discretized_game_oracle(sol.market, 101, 51, 100_000, rng_seed=0)
    assert abs(result.trade_probability - sol.alpha_star) <= 0.05
    # P(trade and gas > g) of the oracle against the solved gas DDF
    tail = result.gas_marginal[::-1].cumsum()[::-1]
    oracle_ddf = np.append(tail[1:], 0.0)
    assert np.max(np.abs(oracle_ddf - gas_ddf(sol, result.gas_fees))) <= 0.05
