"""
Independent checks that a computed solution really is an equilibrium.

- pure_payoff plays one round of the game under the execution-order rule
  (higher gas fee executes first, exact ties go to a coin flip).
- monte_carlo_payoff draws both players from the equilibrium strategy.
- best_deviation_gap searches a gas x amount grid for a profitable deviation.
- discretized_game_oracle runs fictitious play on a finite version of the
  game, without using the solver at all.

Random streams: every draw comes from numpy's PCG64 seeded with
SeedSequence(seed, spawn_key=(batch, stream)), where stream 0 is the
player being scored, 1 is the opponent and 2 is the tie-breaking coin.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from equilibrium import _response, d_star, response_surface
from errors import InvalidArgumentError, UnsupportedOpportunityError
from market_core import derived_quantities, first_mover_profit, normalized_fma, second_mover_profit

logger = logging.getLogger(__name__)

MC_BATCH_SIZE = 25_000
MC_WORKERS = 4
RANGE_RTOL = 1e-12


class TieWinner(Enum):
    ME = 'me'
    THEM = 'them'


@dataclass(frozen=True)
class Action:
    trades: bool
    gas_fee: float = 0.0
    amount: float = 0.0


NO_TRADE = Action(False)


@dataclass(frozen=True)
class SimulationReport:
    sample_count: int
    mean_payoff: float
    std_error: float
    tie_count: int
    first_mover_fraction: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class OracleResult:
    strategy: np.ndarray
    gas_fees: np.ndarray
    amounts: np.ndarray
    regret: float
    iterations: int

    @property
    def trade_probability(self):
        return float(1.0 - self.strategy[0])

    @property
    def gas_marginal(self):
        """Probability of each gas level (summed over amounts)."""
        return self.strategy[1:].reshape(len(self.gas_fees), len(self.amounts)).sum(axis=1)

    def to_dict(self):
        return {
            'iterations': self.iterations,
            'regret': self.regret,
            'trade_probability': self.trade_probability,
            'gas_fees': self.gas_fees.tolist(),
            'gas_marginal': self.gas_marginal.tolist(),
        }


def _check_action(market, action):
    if not action.trades:
        return
    derived = derived_quantities(market)
    g_low, g_high = market.base_gas_fee, derived.max_gas_fee
    slack = RANGE_RTOL * max(g_high, 1.0)
    if not (g_low - slack <= action.gas_fee <= g_high + slack):
        raise InvalidArgumentError(
            f"gas fee {action.gas_fee!r} outside [{g_low:.6g}, {g_high:.6g}]")
    d_hat = derived.optimal_amount
    if not (0.0 <= action.amount <= d_hat * (1.0 + RANGE_RTOL)):
        raise InvalidArgumentError(f"amount {action.amount!r} outside [0, {d_hat:.6g}]")


def pure_payoff(market, mine, theirs, tie_winner):
    """My payoff for one round; the caller decides who wins an exact tie."""
    _check_action(market, mine)
    _check_action(market, theirs)
    if not mine.trades:
        return 0.0
    first = float(first_mover_profit(market, mine.gas_fee, mine.amount))
    if not theirs.trades or mine.gas_fee > theirs.gas_fee:
        return first
    if mine.gas_fee < theirs.gas_fee or tie_winner is TieWinner.THEM:
        return float(second_mover_profit(market, mine.gas_fee, mine.amount, theirs.amount))
    return first


def _generator(seed, batch, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(batch, stream))))


def _draw(sol, n, rng):
    trades = rng.random(n) < sol.alpha_star
    u = rng.random(n)
    # inverse of the conditional gas-fee DDF
    z = sol.path.z_of_cumulative_v(u * sol.support_mass)
    gas = np.where(trades, sol.g_h - sol.liquidity_b * z, 0.0)
    amount = np.where(trades, sol.market.pool.reserve_a * sol.path.x_at(z), 0.0)
    return trades, gas, amount


def sample_actions(sol, n, rng_seed, batch=0, stream=0):
    """n equilibrium actions as arrays (trades, gas_fee, amount)."""
    return _draw(sol, n, _generator(rng_seed, batch, stream))


def sample_action(sol, rng_seed):
    trades, gas, amount = sample_actions(sol, 1, rng_seed)
    if not trades[0]:
        return NO_TRADE
    return Action(True, float(gas[0]), float(amount[0]))


def _batch_stats(sol, n, rng_seed, batch):
    mine = _draw(sol, n, _generator(rng_seed, batch, 0))
    theirs = _draw(sol, n, _generator(rng_seed, batch, 1))
    coin = _generator(rng_seed, batch, 2).random(n) < 0.5
    trades, gas, amount = mine
    other_trades, other_gas, other_amount = theirs

    y_a = sol.market.pool.reserve_a
    first_profit = first_mover_profit(sol.market, gas, amount)
    second_profit = first_profit - sol.liquidity_b * normalized_fma(amount / y_a, other_amount / y_a)
    ties = trades & other_trades & (gas == other_gas)
    first = trades & (~other_trades | (gas > other_gas) | (ties & coin))
    payoff = np.where(trades, np.where(first, first_profit, second_profit), 0.0)

    mean = float(payoff.mean())
    return {
        'count': n,
        'mean': mean,
        'm2': float(((payoff - mean) ** 2).sum()),
        'ties': int(ties.sum()),
        'firsts': int(first.sum()),
        'trades': int(trades.sum()),
    }


def _merge(acc, stats):
    # pairwise update of count, mean and sum of squared deviations
    if acc is None:
        return dict(stats)
    n = acc['count'] + stats['count']
    delta = stats['mean'] - acc['mean']
    return {
        'count': n,
        'mean': acc['mean'] + delta * stats['count'] / n,
        'm2': acc['m2'] + stats['m2'] + delta ** 2 * acc['count'] * stats['count'] / n,
        'ties': acc['ties'] + stats['ties'],
        'firsts': acc['firsts'] + stats['firsts'],
        'trades': acc['trades'] + stats['trades'],
    }


def monte_carlo_payoff(sol, n, rng_seed, batch_size=MC_BATCH_SIZE, workers=MC_WORKERS):
    """Average payoff of one equilibrium player over n simulated games."""
    if n < 1:
        raise InvalidArgumentError("monte_carlo_payoff needs n >= 1")
    sizes = [batch_size] * (n // batch_size)
    if n % batch_size:
        sizes.append(n % batch_size)
    logger.info("Simulating %d games in %d batches (seed %d)", n, len(sizes), rng_seed)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda b: _batch_stats(sol, sizes[b], rng_seed, b),
                                    range(len(sizes))))
    acc = None
    for stats in results:
        acc = _merge(acc, stats)
    variance = acc['m2'] / (n - 1) if n > 1 else 0.0
    return SimulationReport(
        sample_count=n,
        mean_payoff=acc['mean'],
        std_error=math.sqrt(variance / n),
        tie_count=acc['ties'],
        first_mover_fraction=acc['firsts'] / acc['trades'] if acc['trades'] else 0.0,
    )


def _equilibrium_value(sol):
    return max(sol.derived.max_gas_fee - sol.g_h, 0.0)


def flatness_deviation(sol, points=100):
    """max |h(g, D*(g)) - (g-hat_H - g_h)| over the support."""
    value = sol.derived.max_gas_fee - sol.g_h
    gas = np.linspace(sol.market.base_gas_fee, sol.g_h, points)
    amounts = d_star(sol, gas)
    return float(max(abs(_response(sol, g, d) - value) for g, d in zip(gas, amounts)))


def best_deviation_gap(sol, gas_grid_size, amount_grid_size):
    """
    How much the claimed equilibrium value can be beaten, or is not delivered.

    The first part is the best grid deviation (including not trading) above
    the value; the second is the value minus the worst on-path payoff.
    """
    if gas_grid_size < 2 or amount_grid_size < 2:
        raise InvalidArgumentError("grid sizes must be at least 2")
    derived = sol.derived
    value = _equilibrium_value(sol)
    gas = np.linspace(sol.market.base_gas_fee, derived.max_gas_fee, gas_grid_size)
    amounts = np.linspace(0.0, derived.optimal_amount, amount_grid_size)
    best = max(float(response_surface(sol, gas, amounts).max()), 0.0)
    on_path_gas = gas[gas <= sol.g_h]
    worst = min(_response(sol, g, d) for g, d in zip(on_path_gas, d_star(sol, on_path_gas)))
    return float(max(0.0, best - value, value - worst))


def build_payoff_matrix(market, gas_fees, amounts):
    """
    Row player's payoff in the finite game.

    Action 0 is not trading; action 1 + i * len(amounts) + j trades amounts[j]
    at gas_fees[i]. Tied gas fees pay the average of first and second mover.
    """
    gas_fees = np.asarray(gas_fees, dtype=float)
    amounts = np.asarray(amounts, dtype=float)
    if np.any(amounts <= 0):
        raise InvalidArgumentError("oracle amounts must be positive")
    gas = np.repeat(gas_fees, len(amounts))
    amount = np.tile(amounts, len(gas_fees))
    n = len(gas) + 1
    y_a = market.pool.reserve_a
    first = first_mover_profit(market, gas, amount)
    matrix = np.zeros((n, n), order='F')
    matrix[1:, 0] = first
    rows = np.arange(1, n)
    for start in range(0, len(gas), 512):
        block = slice(start, start + 512)
        order = np.sign(gas[block, None] - gas[None, :])
        # weight of the first-mover advantage lost: 0 first, 1 second, 1/2 tie
        lost = 0.5 * (1.0 - order)
        fma = market.liquidity_b * normalized_fma(amount[block, None] / y_a, amount[None, :] / y_a)
        matrix[rows[block], 1:] = first[block, None] - lost * fma
    return matrix


def _regret(matrix, strategy):
    payoffs = matrix @ strategy
    return float(payoffs.max() - strategy @ payoffs)


def fictitious_play(matrix, iterations, rng_seed):
    """Empirical strategy of symmetric fictitious play; exact ties broken at random."""
    rng = _generator(rng_seed, 0, 0)
    n = matrix.shape[0]
    cumulative = np.zeros(n)
    counts = np.zeros(n)
    for _ in range(iterations):
        best = np.flatnonzero(cumulative == cumulative.max())
        action = best[0] if len(best) == 1 else rng.choice(best)
        counts[action] += 1
        cumulative += matrix[:, action]
    strategy = counts / counts.sum()
    return strategy, _regret(matrix, strategy)


def fictitious_play_oracle(market, gas_fees, amounts, iterations, rng_seed):
    """Fictitious play on explicit gas and amount levels."""
    gas_fees = np.asarray(gas_fees, dtype=float)
    amounts = np.asarray(amounts, dtype=float)
    matrix = build_payoff_matrix(market, gas_fees, amounts)
    logger.info("Fictitious play on %d actions for %d iterations", matrix.shape[0], iterations)
    strategy, regret = fictitious_play(matrix, iterations, rng_seed)
    return OracleResult(strategy, gas_fees, amounts, regret, iterations)


def discretized_game_oracle(market, gas_levels, amount_levels, iterations, rng_seed):
    """Fictitious play on evenly spaced gas fees in [g_L, g-hat_H] and amounts in (0, D-hat_A]."""
    derived = derived_quantities(market)
    if not 1.0 < derived.opportunity <= 3.0:
        raise UnsupportedOpportunityError(f"O={derived.opportunity!r} outside (1, 3]")
    if gas_levels < 5 or amount_levels < 5:
        raise InvalidArgumentError("the oracle needs at least 5 gas and 5 amount levels")
    gas_fees = np.linspace(market.base_gas_fee, derived.max_gas_fee, gas_levels)
    d_hat = derived.optimal_amount
    amounts = np.linspace(d_hat / amount_levels, d_hat, amount_levels)
    return fictitious_play_oracle(market, gas_fees, amounts, iterations, rng_seed)


if __name__ == "__main__":
    from equilibrium import solve_equilibrium
    from market_core import MarketParams, PoolState

    logging.basicConfig(level=logging.INFO)
    pool = PoolState(1000.0, 4_000_000.0, 0.0)
    g_high = derived_quantities(MarketParams(pool, 2000.0, 1.0)).max_gas_fee
    sol = solve_equilibrium(MarketParams(pool, 2000.0, 1.0, base_gas_fee=0.9 * g_high))
    print(f"flatness deviation: {flatness_deviation(sol):.6g}")
    print(f"best deviation gap: {best_deviation_gap(sol, 50, 50):.6g}")
    report = monte_carlo_payoff(sol, 20_000, rng_seed=7)
    print(f"Monte Carlo payoff: {report.mean_payoff:.3f} +/- {report.std_error:.3f}")
