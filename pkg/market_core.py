"""
Constant-product AMM mechanics and the single-block payoffs of an
arbitrageur trading against a CEX price.

All amounts are real numbers: USD for money, tokens for reserves and trades.
The game fixes the direction "deposit A, withdraw B" (O > 1); the opposite
direction is handled by swapping the asset roles before calling in here.
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import InvalidArgumentError


@dataclass(frozen=True)
class NumericTolerances:
    """Tolerances the payoff identities are checked against."""
    product_rel: float = 1e-12
    payoff_rel: float = 1e-10
    symmetry_rel: float = 1e-10
    break_even_rel: float = 1e-8
    gradient_rel: float = 1e-6


TOLERANCES = NumericTolerances()


@dataclass(frozen=True)
class PoolState:
    reserve_a: float
    reserve_b: float
    fee_rate: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.reserve_a) and self.reserve_a > 0):
            raise InvalidArgumentError(f"reserve_a must be positive, got {self.reserve_a}")
        if not (math.isfinite(self.reserve_b) and self.reserve_b > 0):
            raise InvalidArgumentError(f"reserve_b must be positive, got {self.reserve_b}")
        if not (0.0 <= self.fee_rate < 1.0):
            raise InvalidArgumentError(f"fee_rate must lie in [0, 1), got {self.fee_rate}")

    @property
    def invariant(self):
        return self.reserve_a * self.reserve_b


@dataclass(frozen=True)
class MarketParams:
    pool: PoolState
    price_a: float
    price_b: float
    base_gas_fee: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.price_a) and self.price_a > 0):
            raise InvalidArgumentError(f"price_a must be positive, got {self.price_a}")
        if not (math.isfinite(self.price_b) and self.price_b > 0):
            raise InvalidArgumentError(f"price_b must be positive, got {self.price_b}")
        if not (math.isfinite(self.base_gas_fee) and self.base_gas_fee >= 0):
            raise InvalidArgumentError(f"base_gas_fee must be non-negative, got {self.base_gas_fee}")

    @property
    def liquidity_b(self):
        return self.pool.reserve_b * self.price_b

    @property
    def opportunity(self):
        pool = self.pool
        return self.liquidity_b / (pool.reserve_a * self.price_a * (1.0 + pool.fee_rate))


@dataclass(frozen=True)
class DerivedQuantities:
    liquidity_b: float
    opportunity: float
    optimal_amount: float
    max_gas_fee: float


def _check_trade(pool, d_a):
    if not math.isfinite(d_a):
        raise InvalidArgumentError(f"trade amount must be finite, got {d_a}")
    if d_a <= -pool.reserve_a:
        raise InvalidArgumentError(
            f"trade amount {d_a} would drain reserve_a ({pool.reserve_a})")


def quote_delta_b(pool, d_a):
    """Change of reserve B when d_a > 0 units of A are deposited."""
    if not (math.isfinite(d_a) and d_a > 0):
        raise InvalidArgumentError(f"d_a must be positive and finite, got {d_a}")
    return -pool.reserve_b / (pool.reserve_a / d_a + 1.0)


def _delta_b(pool, d_a):
    # product rule for either sign of d_a
    if d_a == 0:
        return 0.0
    return -pool.reserve_b * d_a / (pool.reserve_a + d_a)


def apply_trade(pool, d_a):
    """Pool after depositing d_a of A (negative d_a withdraws). Fees stay out of the pool."""
    _check_trade(pool, d_a)
    if d_a == 0:
        return pool
    new_a = pool.reserve_a + d_a
    return PoolState(new_a, pool.reserve_a * pool.reserve_b / new_a, pool.fee_rate)


def trade_value(d_a, d_b, price_a, price_b, fee_rate, gas_fee):
    """
    Net USD profit of a DEX trade with legs (d_a, d_b) unwound on the CEX.

    Positive legs are deposits and pay the proportional fee.
    """
    fee_a = fee_rate if d_a > 0 else 0.0
    fee_b = fee_rate if d_b > 0 else 0.0
    return -(1.0 + fee_a) * d_a * price_a - (1.0 + fee_b) * d_b * price_b - gas_fee


def net_profit(market, d_a, g):
    pool = market.pool
    _check_trade(pool, d_a)
    d_b = _delta_b(pool, d_a)
    return trade_value(d_a, d_b, market.price_a, market.price_b, pool.fee_rate, g)


def derived_quantities(market):
    liquidity = market.liquidity_b
    opportunity = market.opportunity
    if opportunity <= 1.0:
        return DerivedQuantities(liquidity, opportunity, 0.0, 0.0)
    root = math.sqrt(opportunity)
    return DerivedQuantities(
        liquidity_b=liquidity,
        opportunity=opportunity,
        optimal_amount=(root - 1.0) * market.pool.reserve_a,
        max_gas_fee=liquidity * (1.0 - 1.0 / root) ** 2,
    )


def first_mover_bounds(market):
    """(D-hat_A, g-hat_H): the first mover's optimal amount and break-even gas fee."""
    derived = derived_quantities(market)
    return derived.optimal_amount, derived.max_gas_fee


def first_mover_profit(market, g, d_a):
    """R_F(g, d_a). Accepts numpy arrays for g and d_a."""
    pool = market.pool
    return d_a * (market.liquidity_b / (pool.reserve_a + d_a)
                  - (1.0 + pool.fee_rate) * market.price_a) - g


def marginal_first_mover_profit(market, d_a):
    """Analytic derivative of R_F with respect to d_a."""
    pool = market.pool
    return (market.liquidity_b * pool.reserve_a / (pool.reserve_a + d_a) ** 2
            - (1.0 + pool.fee_rate) * market.price_a)


def normalized_fma(x, x_bar):
    """First-mover advantage over L_B, in amounts relative to reserve_a."""
    return x * x_bar * (2.0 + x + x_bar) / ((1.0 + x) * (1.0 + x_bar) * (1.0 + x + x_bar))


def _fma(market, d_a, d_bar):
    y_a = market.pool.reserve_a
    return market.liquidity_b * normalized_fma(d_a / y_a, d_bar / y_a)


def first_mover_advantage(market, d_a, d_bar):
    """V(d_a; d_bar), written in its symmetric form."""
    if np.any(np.asarray(d_a) <= 0) or np.any(np.asarray(d_bar) <= 0):
        raise InvalidArgumentError("first-mover advantage needs positive trade amounts")
    return _fma(market, d_a, d_bar)


def second_mover_profit(market, g, d_a, d_bar):
    """R_S(g, d_a; d_bar) = R_F(g, d_a) - V(d_a; d_bar)."""
    if np.any(np.asarray(d_a) < 0) or np.any(np.asarray(d_bar) < 0):
        raise InvalidArgumentError("trade amounts must be non-negative")
    return first_mover_profit(market, g, d_a) - _fma(market, d_a, d_bar)


if __name__ == "__main__":
    pool = PoolState(1000.0, 4_000_000.0, 0.0)
    market = MarketParams(pool, price_a=2000.0, price_b=1.0)
    derived = derived_quantities(market)
    print(f"L_B = {derived.liquidity_b:,.2f}  O = {derived.opportunity:.4f}")
    print(f"D_A = {derived.optimal_amount:.4f}  g_H = {derived.max_gas_fee:,.2f}")
    print(f"R_F(g_H, D_A) = {first_mover_profit(market, derived.max_gas_fee, derived.optimal_amount):.6f}")
