"""
Comparative statics of the equilibrium.

Sweeps one market parameter (base gas fee, liquidity or opportunity) over a
grid, solves every point and compares the resulting gas-fee and
relative-amount DDFs by first-order stochastic dominance.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from equilibrium import (MAX_OPPORTUNITY, ParticipationCase, amount_ddf, find_z_hat, gas_ddf,
                         participation_margin, solve_equilibrium, solve_xhat, threshold_base_gas_fee)
from errors import GasGameError, InvalidArgumentError
from market_core import MarketParams, PoolState, derived_quantities

logger = logging.getLogger(__name__)

DDF_POINTS = 512
FOSD_TOLERANCE = 1e-6
SWEEP_WORKERS = 4

# Liquidity and base gas fee of the reference market
REFERENCE_LIQUIDITY = 48_033_495.0
REFERENCE_BASE_GAS_FEE = 5.0
REFERENCE_RESERVE_A = 16_000.0
REFERENCE_FEE_RATE = 0.003


class Varying(str, Enum):
    BASE_GAS_FEE = 'base_gas_fee'
    LIQUIDITY = 'liquidity'
    OPPORTUNITY = 'opportunity'


class Dominance(str, Enum):
    DOMINATES = 'dominates'
    DOMINATED_BY = 'dominated_by'
    INCOMPARABLE = 'incomparable'


@dataclass(frozen=True, eq=False)
class SampledDDF:
    abscissae: np.ndarray
    values: np.ndarray


def reference_market(opportunity=1.5, base_gas_fee=REFERENCE_BASE_GAS_FEE,
                     liquidity=REFERENCE_LIQUIDITY):
    """Reference market: L_B and g_L of the reference calibration, O set through price_a."""
    pool = PoolState(REFERENCE_RESERVE_A, liquidity, REFERENCE_FEE_RATE)
    price_a = liquidity / (opportunity * REFERENCE_RESERVE_A * (1.0 + REFERENCE_FEE_RATE))
    return MarketParams(pool, price_a, 1.0, base_gas_fee)


def market_with(template, varying, value):
    """template with one parameter replaced; the other two are held fixed."""
    if varying is Varying.BASE_GAS_FEE:
        return replace(template, base_gas_fee=value)
    pool = template.pool
    if varying is Varying.LIQUIDITY:
        # scale both reserves so O stays put
        scale = value / template.liquidity_b
        return replace(template, pool=PoolState(pool.reserve_a * scale, pool.reserve_b * scale,
                                                pool.fee_rate))
    price_a = template.liquidity_b / (value * pool.reserve_a * (1.0 + pool.fee_rate))
    return replace(template, price_a=price_a)


@dataclass(frozen=True, eq=False)
class SweepSpec:
    varying: Varying
    grid: tuple
    fixed: MarketParams
    gas_abscissae: np.ndarray
    amount_abscissae: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if len(grid) == 0:
            raise InvalidArgumentError("sweep grid is empty")
        if np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError("sweep grid must be strictly increasing")
        for value in grid:
            opportunity = self.market_at(value).opportunity
            if not 1.0 < opportunity <= MAX_OPPORTUNITY * (1.0 + 1e-12):
                raise InvalidArgumentError(
                    f"{self.varying.value}={value:.6g} gives O={opportunity:.6g} outside (1, 3]")

    def market_at(self, value):
        return market_with(self.fixed, self.varying, float(value))


def sweep_spec(varying, grid, fixed, points=DDF_POINTS):
    """SweepSpec with DDF abscissae shared across the grid."""
    varying = Varying(varying)
    grid = tuple(float(v) for v in grid)
    markets = [market_with(fixed, varying, v) for v in grid]
    derived = [derived_quantities(m) for m in markets]
    g_top = max(d.max_gas_fee for d in derived)
    x_top = max(d.optimal_amount / m.pool.reserve_a for d, m in zip(derived, markets))
    gas = np.linspace(0.0, 1.01 * g_top, points)
    amounts = np.linspace(0.0, 1.01 * x_top, points + 1)[1:]
    return SweepSpec(varying, grid, fixed, gas, amounts)


def _solve_row(spec, value, config):
    market = spec.market_at(value)
    row = {
        'param': value,
        'base_gas_fee': market.base_gas_fee,
        'liquidity_b': market.liquidity_b,
        'opportunity': market.opportunity,
    }
    try:
        sol = solve_equilibrium(market, config)
        row.update({
            'success': True,
            'error': '',
            'case': sol.case_tag.value,
            'alpha_star': sol.alpha_star,
            'g_h': sol.g_h,
            'expected_profit': sol.expected_profit,
            'z_hat': sol.z_hat,
            'margin': participation_margin(market.opportunity, config),
            'gas_ddf': np.asarray(gas_ddf(sol, spec.gas_abscissae)),
            'amount_ddf': np.asarray(amount_ddf(sol, spec.amount_abscissae)),
        })
    except GasGameError as e:
        logger.warning("Sweep point %s=%.6g failed: %s", spec.varying.value, value, e)
        row.update({
            'success': False,
            'error': str(e),
            'case': '',
            'alpha_star': math.nan,
            'g_h': math.nan,
            'expected_profit': math.nan,
            'z_hat': math.nan,
            'margin': math.nan,
            'gas_ddf': None,
            'amount_ddf': None,
        })
    return row


def run_sweep(spec, config=None, workers=SWEEP_WORKERS):
    """One solved equilibrium per grid point, in grid order; failures stay in their row."""
    logger.info("Sweeping %s over %d points", spec.varying.value, len(spec.grid))
    if spec.varying is not Varying.OPPORTUNITY:
        # every point shares one x-hat path; solve it once before fanning out
        try:
            solve_xhat(spec.fixed.opportunity, config)
        except GasGameError as e:
            logger.warning("Could not pre-solve the x-hat path at O=%.6g: %s",
                           spec.fixed.opportunity, e)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        rows = list(executor.map(lambda v: _solve_row(spec, v, config), spec.grid))
    failed = sum(1 for row in rows if not row['success'])
    if failed:
        logger.warning("%d of %d sweep points failed", failed, len(rows))
    return rows


def fosd_compare(ddf_low, ddf_high, tolerance=FOSD_TOLERANCE):
    """How ddf_high relates to ddf_low under first-order stochastic dominance."""
    if (ddf_low.abscissae.shape != ddf_high.abscissae.shape
            or not np.array_equal(ddf_low.abscissae, ddf_high.abscissae)):
        raise InvalidArgumentError("DDFs must be sampled on the same abscissae")
    for ddf in (ddf_low, ddf_high):
        if np.any(np.diff(ddf.values) > tolerance):
            raise InvalidArgumentError("a DDF must be non-increasing")
    diff = np.asarray(ddf_high.values) - np.asarray(ddf_low.values)
    if np.all(diff >= -tolerance) and np.any(diff > tolerance):
        return Dominance.DOMINATES
    if np.all(diff <= tolerance) and np.any(diff < -tolerance):
        return Dominance.DOMINATED_BY
    return Dominance.INCOMPARABLE


def sweep_tables(spec, rows):
    """(scalars, gas DDF long table, amount DDF long table) for a finished sweep."""
    name = spec.varying.value
    scalar_keys = ('margin', 'alpha_star', 'expected_profit', 'g_h', 'z_hat', 'case',
                   'success', 'error')
    scalars = pd.DataFrame([{name: row['param'], **{k: row[k] for k in scalar_keys}}
                            for row in rows])

    def long_table(key, abscissae):
        frames = [pd.DataFrame({name: row['param'], 'abscissa': abscissae, 'value': row[key]})
                  for row in rows if row['success']]
        if not frames:
            return pd.DataFrame(columns=[name, 'abscissa', 'value'])
        return pd.concat(frames, ignore_index=True)

    return (scalars, long_table('gas_ddf', spec.gas_abscissae),
            long_table('amount_ddf', spec.amount_abscissae))


def figure_data(o_grid, template=None, config=None):
    """Per-O participation margin, alpha*, expected profit and both DDFs."""
    template = template or reference_market()
    spec = sweep_spec(Varying.OPPORTUNITY, o_grid, template)
    return sweep_tables(spec, run_sweep(spec, config))


def minimum_opportunity(template):
    """O at which g-hat_H equals g_L."""
    return (1.0 - math.sqrt(template.base_gas_fee / template.liquidity_b)) ** -2


def opportunity_threshold(template, config=None):
    """
    O-bar, the opportunity above which the arbitrageur trades for sure.

    Root of L_B * ((1 - O^{-1/2})^2 - z-hat(O)) = g_L; None when it lies above O = 3.
    """
    ratio = template.base_gas_fee / template.liquidity_b

    def excess(opportunity):
        return participation_margin(opportunity, config) - ratio

    if excess(MAX_OPPORTUNITY) < 0:
        return None
    lo = min(minimum_opportunity(template) * (1.0 + 1e-9), MAX_OPPORTUNITY)
    if excess(lo) >= 0:
        return lo
    return brentq(excess, lo, MAX_OPPORTUNITY, xtol=1e-12, rtol=1e-12)


def locate_opportunity_threshold(rows):
    """
    O-bar read off an opportunity sweep: the linear crossing of
    L_B * margin - g_L between consecutive solved rows.
    """
    solved = [row for row in rows if row['success']]
    for a, b in zip(solved, solved[1:]):
        fa = a['liquidity_b'] * a['margin'] - a['base_gas_fee']
        fb = b['liquidity_b'] * b['margin'] - b['base_gas_fee']
        if fa < 0 <= fb:
            return a['opportunity'] + (b['opportunity'] - a['opportunity']) * (-fa) / (fb - fa)
    return None


def implied_threshold(opportunity, template, config=None):
    """(1 - (g_L/L_B + z-hat(O))^{1/2})^{-2}; equals O at O-bar."""
    z_hat = find_z_hat(solve_xhat(opportunity, config))
    return (1.0 - math.sqrt(template.base_gas_fee / template.liquidity_b + z_hat)) ** -2


FRACTIONS = np.linspace(0.1, 0.9, 5)


def regime_grid(varying, regime, template, config=None):
    """A 5-point grid of the varying parameter lying inside one participation case."""
    varying = Varying(varying)
    full = ParticipationCase(regime) is ParticipationCase.FULL
    if varying is Varying.BASE_GAS_FEE:
        threshold = threshold_base_gas_fee(template, config)
        if full:
            return tuple(threshold * FRACTIONS)
        g_high = derived_quantities(template).max_gas_fee
        return tuple(threshold + FRACTIONS * (g_high - threshold))
    if varying is Varying.LIQUIDITY:
        opportunity = template.opportunity
        l_star = template.base_gas_fee / participation_margin(opportunity, config)
        if full:
            return tuple(l_star * np.linspace(1.5, 5.5, 5))
        l_min = template.base_gas_fee / (1.0 - opportunity ** -0.5) ** 2
        return tuple(l_min + FRACTIONS * (l_star - l_min))
    o_bar = opportunity_threshold(template, config)
    if o_bar is None:
        raise InvalidArgumentError("no full-participation band below O = 3 for this template")
    if full:
        return tuple(o_bar + FRACTIONS * (MAX_OPPORTUNITY - o_bar))
    o_min = minimum_opportunity(template)
    return tuple(o_min + FRACTIONS * (o_bar - o_min))


_LABEL = {ParticipationCase.FULL: 'full', ParticipationCase.PARTIAL: 'partial'}

# direction of alpha* and expected profit along each parameter
_DIRECTION = {Varying.BASE_GAS_FEE: -1, Varying.LIQUIDITY: 1, Varying.OPPORTUNITY: 1}

# expected (gas, amount) DDF relation of consecutive grid points; None means unchanged
_ORDERING = {
    (Varying.BASE_GAS_FEE, ParticipationCase.FULL): (Dominance.DOMINATES, None),
    (Varying.BASE_GAS_FEE, ParticipationCase.PARTIAL): (Dominance.DOMINATED_BY, Dominance.DOMINATED_BY),
    (Varying.LIQUIDITY, ParticipationCase.FULL): (Dominance.DOMINATES, None),
    (Varying.LIQUIDITY, ParticipationCase.PARTIAL): (Dominance.DOMINATES, Dominance.DOMINATES),
    (Varying.OPPORTUNITY, ParticipationCase.FULL): (Dominance.DOMINATES, Dominance.DOMINATES),
    (Varying.OPPORTUNITY, ParticipationCase.PARTIAL): (Dominance.DOMINATES, Dominance.DOMINATES),
}


def _strictly_monotone(values, direction):
    steps = np.diff(values) * direction
    return bool(np.all(steps > 0))


def _check_scalar(quantity, rows, regime, direction):
    values = np.array([row[quantity] for row in rows])
    if quantity == 'alpha_star':
        if regime is ParticipationCase.FULL:
            return bool(np.all(values == 1.0)), "alpha* = 1"
        ok = bool(np.all(values < 1.0)) and _strictly_monotone(values, direction)
        return ok, "alpha* < 1 and strictly monotone"
    if regime is ParticipationCase.PARTIAL:
        return bool(np.all(values == 0.0)), "expected profit = 0"
    ok = bool(np.all(values > 0.0)) and _strictly_monotone(values, direction)
    return ok, "expected profit > 0 and strictly monotone"


def _check_ddfs(spec, rows, key, expected, tolerance):
    abscissae = spec.gas_abscissae if key == 'gas_ddf' else spec.amount_abscissae
    ddfs = [SampledDDF(abscissae, row[key]) for row in rows]
    if expected is None:
        spread = max(float(np.max(np.abs(b.values - a.values))) for a, b in zip(ddfs, ddfs[1:]))
        return spread <= tolerance, "independent of the parameter"
    relations = [fosd_compare(a, b, tolerance) for a, b in zip(ddfs, ddfs[1:])]
    return all(r is expected for r in relations), f"consecutive points: {expected.value}"


def comparative_statics_checks(template=None, config=None, tolerance=FOSD_TOLERANCE):
    """
    Every comparative-statics claim as a named pass/fail row.

    For each parameter and participation case: alpha*, expected profit and the
    FOSD order of the gas-fee and relative-amount DDFs along a 5-point grid.
    """
    template = template or reference_market()
    results = []
    for varying in Varying:
        for regime in ParticipationCase:
            name = f"{varying.value}/{_LABEL[regime]}"
            try:
                spec = sweep_spec(varying, regime_grid(varying, regime, template, config), template)
                rows = run_sweep(spec, config)
            except GasGameError as e:
                for quantity in ('alpha_star', 'expected_profit', 'gas_ddf', 'amount_ddf'):
                    results.append({'check': f"{name}/{quantity}", 'success': False,
                                    'expected': '', 'error': str(e)})
                continue
            failed = [row['error'] for row in rows if not row['success']]
            wrong_case = [row['param'] for row in rows if row['success'] and row['case'] != regime.value]
            gas_order, amount_order = _ORDERING[(varying, regime)]
            checks = {
                'alpha_star': lambda: _check_scalar('alpha_star', rows, regime, _DIRECTION[varying]),
                'expected_profit': lambda: _check_scalar('expected_profit', rows, regime,
                                                         _DIRECTION[varying]),
                'gas_ddf': lambda: _check_ddfs(spec, rows, 'gas_ddf', gas_order, tolerance),
                'amount_ddf': lambda: _check_ddfs(spec, rows, 'amount_ddf', amount_order, tolerance),
            }
            for quantity, check in checks.items():
                row = {'check': f"{name}/{quantity}", 'expected': '', 'error': ''}
                if failed:
                    row.update(success=False, error=failed[0])
                elif wrong_case:
                    row.update(success=False, error=f"grid points outside the {regime.value} case: {wrong_case}")
                else:
                    ok, expected = check()
                    row.update(success=ok, expected=expected)
                results.append(row)
    passed = sum(1 for row in results if row['success'])
    logger.info("Comparative statics: %d of %d checks passed", passed, len(results))
    return results


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    scalars, _, _ = figure_data([1.05, 1.2, 1.5, 2.0, 3.0])
    print(scalars[['opportunity', 'margin', 'alpha_star', 'expected_profit', 'case']])
    o_bar = opportunity_threshold(reference_market())
    print(f"O-bar at the reference calibration: {o_bar:.6f}")
