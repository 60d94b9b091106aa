"""
Symmetric mixed equilibrium of the two-arbitrageur gas-fee game.

The equilibrium is built from the decreasing path x-hat(z) that solves

    Q-hat(x(z)) = integral_0^z K(x(z), x(zbar)) dzbar,

marched node by node with trapezoidal quadrature. At every new node the
endpoint of the quadrature uses K(x, x), so the unknown appears on both
sides and each step is a scalar root-find. Everything else (the support
width z-hat, the participation probability, the density, the trading
amount and the response function) is read off the stored path.

Relative trading amounts x = d_A / reserve_a are used throughout; gas fees
enter through z = (g_H - g) / L_B.
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from errors import (BracketMissingError, InvalidArgumentError, NoTradeError,
                    NonConvergenceError, OutOfSupportError, UnsupportedOpportunityError)
from market_core import (MarketParams, PoolState, derived_quantities, first_mover_profit,
                         normalized_fma)
from settings import SolverConfig, market_from_config, market_to_config

logger = logging.getLogger(__name__)

MAX_OPPORTUNITY = 3.0
ROOT_FLOOR = 1e-12
SUPPORT_RTOL = 1e-12


class ParticipationCase(str, Enum):
    FULL = 'FullParticipation'
    PARTIAL = 'PartialParticipation'


def q_hat(x, opportunity):
    """Normalized marginal first-mover profit: 1/(1+x)^2 - 1/O."""
    return 1.0 / (1.0 + x) ** 2 - 1.0 / opportunity


def k_kernel(x, x_bar):
    """K(x, x_bar): marginal first-mover advantage at x over V(x_bar, x_bar)."""
    if np.any(np.asarray(x_bar) <= 0):
        raise InvalidArgumentError("k_kernel needs x_bar > 0")
    return _kernel(x, x_bar)


def _kernel(x, x_bar):
    return ((1.0 + x_bar) * (1.0 + 2.0 * x_bar) * (2.0 * (1.0 + x) + x_bar)
            / (2.0 * x_bar * (1.0 + x) ** 2 * (1.0 + x_bar + x) ** 2))


def _kernel_diagonal(x):
    # K(x, x) in closed form
    return (2.0 + 3.0 * x) / (2.0 * x * (1.0 + x) * (1.0 + 2.0 * x))


def v_fun(x):
    """v(x) = L_B / V(y_A x, y_A x) = (1+x)(1+2x) / (2x^2)."""
    if np.any(np.asarray(x) <= 0):
        raise InvalidArgumentError("v_fun needs x > 0")
    return _v(x)


def _v(x):
    return (1.0 + x) * (1.0 + 2.0 * x) / (2.0 * x * x)


@dataclass(frozen=True, eq=False)
class XhatPath:
    """Solved nodes (z, x-hat) with the running integral of v along the path."""
    z: np.ndarray
    x: np.ndarray
    cumulative_v: np.ndarray
    opportunity: float
    max_residual: float
    config: SolverConfig

    @property
    def v(self):
        return _v(self.x)

    @property
    def nodes(self):
        return np.column_stack((self.z, self.x))

    @property
    def z_end(self):
        return float(self.z[-1])

    def __len__(self):
        return len(self.z)

    def _check_z(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0) or np.any(z > self.z[-1] * (1.0 + SUPPORT_RTOL)):
            raise InvalidArgumentError(
                f"z outside the solved path [0, {self.z[-1]:.6g}]")
        return np.clip(z, 0.0, self.z[-1])

    def _segment(self, z):
        k = np.searchsorted(self.z, z, side='right')
        return np.clip(k, 1, len(self.z) - 1)

    def x_at(self, z):
        """Piecewise-linear x-hat(z)."""
        z = self._check_z(z)
        return np.interp(z, self.z, self.x)

    def cumulative_v_at(self, z):
        """
        integral_0^z v(x-hat) dzbar, consistent with the node values.

        Inside a segment the last trapezoid is closed at the interpolated x.
        """
        z = self._check_z(z)
        k = self._segment(z)
        z0 = self.z[k - 1]
        x_lin = np.interp(z, self.z, self.x)
        v0 = _v(self.x[k - 1])
        return self.cumulative_v[k - 1] + 0.5 * (z - z0) * (v0 + _v(x_lin))

    def z_of_x(self, x):
        """Inverse of x-hat; clipped to the ends of the path."""
        return np.interp(x, self.x[::-1], self.z[::-1])

    def z_of_cumulative_v(self, c, iterations=64):
        """Inverse of cumulative_v_at by bisection inside the bracketing segment."""
        c = np.asarray(c, dtype=float)
        if np.any(c < 0) or np.any(c > self.cumulative_v[-1]):
            raise InvalidArgumentError("cumulative v outside the solved path")
        k = np.clip(np.searchsorted(self.cumulative_v, c, side='left'), 1, len(self.z) - 1)
        lo = np.array(self.z[k - 1], dtype=float)
        hi = np.array(self.z[k], dtype=float)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.cumulative_v_at(mid) < c
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


class _PathMarcher:
    """Grows the node tables of one x-hat path."""

    def __init__(self, opportunity, config, capacity=4096):
        self.opportunity = opportunity
        self.config = config
        self.size = 0
        self.z = np.empty(capacity)
        self.x = np.empty(capacity)
        self.cumv = np.empty(capacity)
        self.weights = np.empty(capacity)
        self.max_residual = 0.0

    def _push(self, z, x, cumv, weight):
        if self.size == len(self.z):
            grow = len(self.z)
            self.z = np.concatenate((self.z, np.empty(grow)))
            self.x = np.concatenate((self.x, np.empty(grow)))
            self.cumv = np.concatenate((self.cumv, np.empty(grow)))
            self.weights = np.concatenate((self.weights, np.empty(grow)))
        i = self.size
        self.z[i], self.x[i], self.cumv[i], self.weights[i] = z, x, cumv, weight
        self.size += 1

    def path(self):
        n = self.size
        arrays = [self.z[:n].copy(), self.x[:n].copy(), self.cumv[:n].copy()]
        for a in arrays:
            a.setflags(write=False)
        return XhatPath(*arrays, opportunity=self.opportunity,
                        max_residual=self.max_residual, config=self.config)

    def _residual(self, step):
        n = self.size
        weights = self.weights[:n]
        nodes = self.x[:n]
        opportunity = self.opportunity

        def residual(x):
            return (np.dot(weights, _kernel(x, nodes)) + 0.5 * step * _kernel_diagonal(x)
                    - q_hat(x, opportunity))
        return residual

    def _predicted_drop(self, step):
        x_prev = self.x[self.size - 1]
        if self.size >= 2:
            previous_step = self.z[self.size - 1] - self.z[self.size - 2]
            return (self.x[self.size - 2] - x_prev) * step / previous_step
        # dx/dz at z = 0 is -K(x0, x0) / (-Q-hat'(x0))
        return step * _kernel_diagonal(x_prev) * (1.0 + x_prev) ** 3 / 2.0

    def _next_x(self, step):
        residual = self._residual(step)
        x_prev = self.x[self.size - 1]
        hi = x_prev
        if residual(hi) <= 0:
            raise NonConvergenceError(
                f"residual does not change sign at z={self.z[self.size - 1]:.6g}",
                partial_path=self.path())
        drop = 1.5 * self._predicted_drop(step)
        while True:
            lo = max(x_prev - drop, ROOT_FLOOR)
            if residual(lo) < 0:
                break
            if lo == ROOT_FLOOR:
                raise NonConvergenceError(
                    f"no root below x={x_prev:.6g}; explosion point reached",
                    partial_path=self.path())
            hi = lo
            drop *= 2.0
        x_new = brentq(residual, lo, hi, xtol=self.config.root_tolerance, maxiter=200)
        error = abs(residual(x_new))
        if error > self.config.residual_tolerance:
            raise NonConvergenceError(
                f"node residual {error:.3g} exceeds {self.config.residual_tolerance:.3g}",
                partial_path=self.path())
        self.max_residual = max(self.max_residual, error)
        return x_new

    def run(self):
        cfg = self.config
        x0 = math.sqrt(self.opportunity) - 1.0
        self._push(0.0, x0, 0.0, 0.0)
        target = 1.0 + cfg.bracket_margin
        while self.cumv[self.size - 1] < target:
            if self.size >= cfg.max_nodes:
                raise NonConvergenceError(
                    f"max_nodes={cfg.max_nodes} reached before cumulative v hit {target}",
                    partial_path=self.path())
            i = self.size - 1
            x_prev = self.x[i]
            v_prev = _v(x_prev)
            step = min(cfg.max_step, cfg.step_shrink_coeff * x_prev ** 2,
                       cfg.max_v_increment / v_prev)
            if i == 0:
                step = min(step, cfg.initial_step)
            # the previous node now closes a full interval on its right
            self.weights[i] += 0.5 * step
            x_new = self._next_x(step)
            cumv = self.cumv[i] + 0.5 * step * (v_prev + _v(x_new))
            self._push(self.z[i] + step, x_new, cumv, 0.5 * step)
        return self.path()


@lru_cache(maxsize=128)
def _solve_xhat_cached(opportunity, config):
    logger.info("Solving x-hat path for O=%.6g", opportunity)
    path = _PathMarcher(opportunity, config).run()
    logger.info("Path solved: %d nodes, z_end=%.6g, max residual %.3g",
                len(path), path.z_end, path.max_residual)
    return path


def _check_opportunity(opportunity):
    if not (math.isfinite(opportunity) and 1.0 < opportunity <= MAX_OPPORTUNITY * (1.0 + 1e-12)):
        raise UnsupportedOpportunityError(
            f"arbitrage opportunity O={opportunity!r} outside (1, {MAX_OPPORTUNITY:g}]")


def solve_xhat(opportunity, config=None):
    """March x-hat from x(0) = sqrt(O) - 1 until cumulative v passes 1 + margin."""
    _check_opportunity(opportunity)
    return _solve_xhat_cached(float(opportunity), config or SolverConfig())


def find_z_hat(path):
    """z-hat with integral_0^z-hat v(x-hat) dzbar = 1."""
    c = path.cumulative_v
    if c[-1] < 1.0:
        raise BracketMissingError(
            f"cumulative v reaches only {c[-1]:.6g} on the stored path; extend the march")
    k = int(np.searchsorted(c, 1.0, side='left'))
    if c[k] == 1.0:
        return float(path.z[k])
    lo, hi = float(path.z[k - 1]), float(path.z[k])
    return brentq(lambda s: float(path.cumulative_v_at(s)) - 1.0, lo, hi,
                  xtol=hi * 1e-15 + 1e-300, rtol=1e-15)


def path_residuals(path):
    """
    Integral-equation residual at every node under re-quadrature on the doubled grid.

    Midpoints of the node grid get x-hat from a monotone cubic interpolant.
    """
    z, x = path.z, path.x
    mid_z = 0.5 * (z[1:] + z[:-1])
    mid_x = PchipInterpolator(z, x)(mid_z)
    fine_z = np.empty(2 * len(z) - 1)
    fine_x = np.empty_like(fine_z)
    fine_z[0::2], fine_z[1::2] = z, mid_z
    fine_x[0::2], fine_x[1::2] = x, mid_x
    residuals = np.zeros(len(z))
    for k in range(1, len(z)):
        end = 2 * k + 1
        integrand = _kernel(x[k], fine_x[:end])
        residuals[k] = trapezoid(integrand, fine_z[:end]) - q_hat(x[k], path.opportunity)
    return np.abs(residuals)


def verify_path_residual(path):
    return float(path_residuals(path).max())


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    market: MarketParams
    path: XhatPath
    case_tag: ParticipationCase
    alpha_star: float
    g_h: float
    z_hat: float
    expected_profit: float

    @property
    def derived(self):
        return derived_quantities(self.market)

    @property
    def liquidity_b(self):
        return self.market.liquidity_b

    @property
    def z_support(self):
        """Width of the gas-fee support in z units."""
        return max(0.0, (self.g_h - self.market.base_gas_fee) / self.market.liquidity_b)

    @property
    def support_mass(self):
        """Path mass of the support; equals alpha_star for a solved equilibrium."""
        return float(self.path.cumulative_v_at(self.z_support))


def solve_equilibrium(market, config=None):
    config = config or SolverConfig()
    derived = derived_quantities(market)
    _check_opportunity(derived.opportunity)
    g_low = market.base_gas_fee
    if derived.max_gas_fee <= g_low:
        raise NoTradeError(
            f"no-trade: the arbitrageur will not trade even if executed first "
            f"(g_H={derived.max_gas_fee:.6g} <= g_L={g_low:.6g})")
    path = solve_xhat(derived.opportunity, config)
    z_hat = find_z_hat(path)
    liquidity = derived.liquidity_b
    width = derived.max_gas_fee - g_low
    if liquidity * z_hat <= width:
        g_h = g_low + liquidity * z_hat
        solution = EquilibriumSolution(market, path, ParticipationCase.FULL, 1.0, g_h, z_hat,
                                       derived.max_gas_fee - g_h)
    else:
        alpha = float(path.cumulative_v_at(width / liquidity))
        solution = EquilibriumSolution(market, path, ParticipationCase.PARTIAL, alpha,
                                       derived.max_gas_fee, z_hat, 0.0)
    logger.info("Equilibrium: %s, alpha*=%.6g, g_h=%.6g, expected profit=%.6g",
                solution.case_tag.value, solution.alpha_star, solution.g_h,
                solution.expected_profit)
    return solution


def expected_profit(sol):
    return sol.alpha_star * (sol.derived.max_gas_fee - sol.g_h)


def _support_z(sol, g):
    g = np.asarray(g, dtype=float)
    g_low = sol.market.base_gas_fee
    slack = SUPPORT_RTOL * max(abs(sol.g_h), 1.0)
    if np.any(g < g_low - slack) or np.any(g > sol.g_h + slack):
        raise OutOfSupportError(f"gas fee outside support [{g_low:.6g}, {sol.g_h:.6g}]")
    return np.clip((sol.g_h - g) / sol.liquidity_b, 0.0, sol.z_support)


def d_star(sol, g):
    """Equilibrium trading amount (tokens of A) at gas fee g."""
    return sol.market.pool.reserve_a * sol.path.x_at(_support_z(sol, g))


def phi_star(sol, g):
    """Equilibrium gas-fee density on the support."""
    z = _support_z(sol, g)
    return _v(sol.path.x_at(z)) / (sol.support_mass * sol.liquidity_b)


def gas_ddf(sol, g):
    """P(trade and gas fee > g)."""
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise InvalidArgumentError("gas_ddf needs g >= 0")
    z = np.clip((sol.g_h - g) / sol.liquidity_b, 0.0, sol.z_support)
    inside = sol.alpha_star * sol.path.cumulative_v_at(z) / sol.support_mass
    result = np.where(g < sol.market.base_gas_fee, sol.alpha_star,
                      np.where(g >= sol.g_h, 0.0, inside))
    return result if result.ndim else float(result)


def amount_ddf(sol, d_rel):
    """P(trade and relative amount > d_rel)."""
    d_rel = np.asarray(d_rel, dtype=float)
    if np.any(d_rel <= 0):
        raise InvalidArgumentError("amount_ddf needs d_rel > 0")
    z = sol.path.z_of_x(d_rel)
    g = np.maximum(sol.g_h - sol.liquidity_b * z, 0.0)
    result = np.where(d_rel >= sol.path.x[0], 0.0, gas_ddf(sol, g))
    return result if result.ndim else float(result)


def _response_integral(sol, z_g, r):
    """integral_0^z_g fma(r, x-hat) v(x-hat) dzbar over the solver nodes."""
    if z_g <= 0:
        return 0.0
    path = sol.path
    k = int(path._segment(z_g))
    z_nodes = path.z[:k]
    x_nodes = path.x[:k]
    integrand = normalized_fma(r, x_nodes) * _v(x_nodes)
    x_end = float(path.x_at(z_g))
    end_value = normalized_fma(r, x_end) * _v(x_end)
    total = trapezoid(integrand, z_nodes) if k > 1 else 0.0
    return total + 0.5 * (z_g - z_nodes[-1]) * (integrand[-1] + end_value)


def _response(sol, g, d_a):
    # gas fees above g_h face an empty upper integral
    z_g = max(0.0, (sol.g_h - g) / sol.liquidity_b)
    r = d_a / sol.market.pool.reserve_a
    scale = sol.alpha_star / sol.support_mass * sol.liquidity_b
    return float(first_mover_profit(sol.market, g, d_a) - scale * _response_integral(sol, z_g, r))


def response_h(sol, g, d_a):
    """Expected profit of playing (g, d_a) against the equilibrium opponent."""
    _support_z(sol, g)
    d_hat = sol.derived.optimal_amount
    if not (0.0 <= d_a <= d_hat * (1.0 + SUPPORT_RTOL)):
        raise InvalidArgumentError(f"d_a={d_a!r} outside [0, {d_hat:.6g}]")
    return _response(sol, float(g), float(d_a))


def response_surface(sol, gas_fees, amounts):
    """h(g, d) on a gas x amount grid; gas fees above g_h are allowed."""
    gas_fees = np.asarray(gas_fees, dtype=float)
    amounts = np.asarray(amounts, dtype=float)
    path = sol.path
    r = amounts / sol.market.pool.reserve_a
    z_g = np.clip((sol.g_h - gas_fees) / sol.liquidity_b, 0.0, sol.z_support)
    last = int(path._segment(z_g.max())) + 1
    z_nodes = path.z[:last]
    x_nodes = path.x[:last]
    integrand = normalized_fma(r[:, None], x_nodes[None, :]) * _v(x_nodes)[None, :]
    running = cumulative_trapezoid(integrand, z_nodes, axis=1, initial=0.0)
    k = np.clip(np.searchsorted(z_nodes, z_g, side='right'), 1, last - 1)
    x_end = path.x_at(z_g)
    end_values = normalized_fma(r[None, :], x_end[:, None]) * _v(x_end)[:, None]
    integral = (running[:, k - 1].T
                + 0.5 * (z_g - z_nodes[k - 1])[:, None] * (integrand[:, k - 1].T + end_values))
    scale = sol.alpha_star / sol.support_mass * sol.liquidity_b
    profit = first_mover_profit(sol.market, gas_fees[:, None], amounts[None, :])
    return profit - scale * integral


def threshold_base_gas_fee(market, config=None):
    """Base gas fee at which the equilibrium switches case: g-hat_H - L_B z-hat."""
    derived = derived_quantities(market)
    _check_opportunity(derived.opportunity)
    z_hat = find_z_hat(solve_xhat(derived.opportunity, config))
    return derived.max_gas_fee - derived.liquidity_b * z_hat


def participation_margin(opportunity, config=None):
    """(1 - O^{-1/2})^2 - z-hat; full participation iff margin * L_B >= g_L."""
    z_hat = find_z_hat(solve_xhat(opportunity, config))
    return (1.0 - opportunity ** -0.5) ** 2 - z_hat


def threshold_liquidity(market, config=None):
    """Liquidity L_B above which the arbitrageur trades for sure (O held fixed)."""
    margin = participation_margin(market.opportunity, config)
    return market.base_gas_fee / margin


def default_gas_abscissae(max_gas_fee, points=512):
    return np.linspace(0.0, 1.01 * max_gas_fee, points)


def default_amount_abscissae(points=512, upper=None):
    upper = 1.01 * (math.sqrt(MAX_OPPORTUNITY) - 1.0) if upper is None else upper
    return np.linspace(0.0, upper, points + 1)[1:]


def gas_ddf_table(sol, abscissae):
    abscissae = np.asarray(abscissae, dtype=float)
    return pd.DataFrame({'abscissa': abscissae, 'value': gas_ddf(sol, abscissae)})


def amount_ddf_table(sol, abscissae):
    abscissae = np.asarray(abscissae, dtype=float)
    return pd.DataFrame({'abscissa': abscissae, 'value': amount_ddf(sol, abscissae)})


def solution_to_dict(sol):
    derived = sol.derived
    path = sol.path
    return {
        'case': sol.case_tag.value,
        'alpha_star': sol.alpha_star,
        'g_h': sol.g_h,
        'z_hat': sol.z_hat,
        'expected_profit': sol.expected_profit,
        'market': market_to_config(sol.market),
        'derived': {
            'liquidity_b': derived.liquidity_b,
            'opportunity': derived.opportunity,
            'optimal_amount': derived.optimal_amount,
            'max_gas_fee': derived.max_gas_fee,
        },
        'solver': asdict(path.config),
        'path': {
            'opportunity': path.opportunity,
            'max_residual': path.max_residual,
            'z': path.z.tolist(),
            'x': path.x.tolist(),
            'cumulative_v': path.cumulative_v.tolist(),
        },
    }


def solution_from_dict(data):
    """Rebuild a solution written by solution_to_dict. Stored fields are taken as given."""
    try:
        market = market_from_config(data['market'])
        raw = data['path']
        arrays = [np.asarray(raw[key], dtype=float) for key in ('z', 'x', 'cumulative_v')]
        config = SolverConfig(**data['solver'])
        case = ParticipationCase(data['case'])
        scalars = {key: float(data[key])
                   for key in ('alpha_star', 'g_h', 'z_hat', 'expected_profit')}
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgumentError(f"malformed solution document: {e}")
    z, x, cumv = arrays
    if not (len(z) == len(x) == len(cumv) >= 2):
        raise InvalidArgumentError("solution path needs at least two nodes of equal length")
    if np.any(np.diff(z) <= 0) or np.any(np.diff(x) >= 0) or np.any(x <= 0):
        raise InvalidArgumentError("solution path must have increasing z and decreasing positive x")
    for a in arrays:
        a.setflags(write=False)
    path = XhatPath(z, x, cumv, float(raw['opportunity']), float(raw['max_residual']), config)
    return EquilibriumSolution(market, path, case, **scalars)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    pool = PoolState(1000.0, 4_000_000.0, 0.0)
    market = MarketParams(pool, 2000.0, 1.0, base_gas_fee=1000.0)
    sol = solve_equilibrium(market)
    print(f"case: {sol.case_tag.value}")
    print(f"alpha* = {sol.alpha_star:.6f}  g_h = {sol.g_h:,.2f}  z_hat = {sol.z_hat:.6g}")
    print(f"expected profit = {sol.expected_profit:,.2f}")
    print(f"path residual under re-quadrature: {verify_path_residual(sol.path):.3g}")
