"""
Empirical arbitrage pipeline over offline block and swap fixtures.

Steps: load the two CSV files, decide per block whether (and in which
direction) an arbitrage opportunity exists, label every swap, price it,
measure how long arbitrage and non-arbitrage stretches last, and run the
standardized regressions on the arbitrage swaps.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from itertools import groupby
from typing import Optional

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from errors import BlockGapError, InvalidArgumentError, SingularDesignError
from market_core import MarketParams, PoolState, derived_quantities, quote_delta_b, trade_value
from settings import PipelineConfig

logger = logging.getLogger(__name__)

BLOCK_COLUMNS = ['block_number', 'reserve_a_prev', 'reserve_b_prev', 'base_fee_per_gas',
                 'cex_price_a', 'cex_price_b']
SWAP_COLUMNS = ['block_number', 'deposit_side', 'amount_in', 'amount_out', 'gas_used',
                'gas_price', 'priority_fee_per_gas']
DETECT_WORKERS = 4


class Direction(str, Enum):
    DEPOSIT_A = 'A'
    DEPOSIT_B = 'B'


class SwapLabel(str, Enum):
    ARBITRAGE = 'arbitrage'
    OTHER = 'other'
    ORPHAN = 'orphan'


@dataclass(frozen=True)
class BlockRecord:
    block_number: int
    reserve_a_prev: float
    reserve_b_prev: float
    base_fee_per_gas: float
    cex_price_a: float
    cex_price_b: float

    def __post_init__(self):
        for name in ('reserve_a_prev', 'reserve_b_prev', 'cex_price_a', 'cex_price_b'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"block {self.block_number}: {name} must be positive")
        if not (math.isfinite(self.base_fee_per_gas) and self.base_fee_per_gas >= 0):
            raise InvalidArgumentError(f"block {self.block_number}: base_fee_per_gas must be >= 0")


@dataclass(frozen=True)
class SwapRecord:
    block_number: int
    deposit_side: Direction
    amount_in: float
    amount_out: float
    gas_used: float
    gas_price: float
    priority_fee_per_gas: float = 0.0

    def __post_init__(self):
        for name in ('amount_in', 'amount_out'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"swap in block {self.block_number}: {name} must be positive")
        for name in ('gas_used', 'gas_price', 'priority_fee_per_gas'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(
                    f"swap in block {self.block_number}: {name} must be non-negative")


@dataclass(frozen=True)
class ArbitrageVerdict:
    direction: Optional[Direction]
    max_gas_fee_usd: float
    base_gas_fee_usd: float
    opportunity: float
    liquidity_b: float
    optimal_amount: float


# ---------------------------------------------------------------- loading

def read_fixture_csv(path, columns):
    try:
        frame = pd.read_csv(path, dtype={'deposit_side': str})
    except FileNotFoundError:
        raise InvalidArgumentError(f"fixture not found: {path}")
    except pd.errors.ParserError as e:
        raise InvalidArgumentError(f"{path}: malformed CSV ({e})")
    if list(frame.columns) != columns:
        raise InvalidArgumentError(
            f"{path}: header must be {','.join(columns)}, got {','.join(frame.columns)}")
    return frame


def block_from_row(row):
    return BlockRecord(int(row['block_number']), float(row['reserve_a_prev']),
                       float(row['reserve_b_prev']), float(row['base_fee_per_gas']),
                       float(row['cex_price_a']), float(row['cex_price_b']))


def swap_from_row(row):
    side = str(row['deposit_side']).strip()
    try:
        direction = Direction(side)
    except ValueError:
        raise InvalidArgumentError(
            f"swap in block {row['block_number']}: deposit_side must be A or B, got {side!r}")
    priority = row['priority_fee_per_gas']
    return SwapRecord(int(row['block_number']), direction, float(row['amount_in']),
                      float(row['amount_out']), float(row['gas_used']), float(row['gas_price']),
                      0.0 if pd.isna(priority) else float(priority))


def load_blocks(path):
    """BlockRecords from a blocks CSV, sorted by block number."""
    frame = read_fixture_csv(path, BLOCK_COLUMNS)
    blocks = [block_from_row(row) for row in frame.to_dict('records')]
    numbers = [b.block_number for b in blocks]
    if len(set(numbers)) != len(numbers):
        raise InvalidArgumentError(f"{path}: duplicate block numbers")
    logger.info("Loaded %d blocks from %s", len(blocks), path)
    return sorted(blocks, key=lambda b: b.block_number)


def load_swaps(path):
    """SwapRecords from a swaps CSV, in file order."""
    frame = read_fixture_csv(path, SWAP_COLUMNS)
    swaps = [swap_from_row(row) for row in frame.to_dict('records')]
    logger.info("Loaded %d swaps from %s", len(swaps), path)
    return swaps


# ------------------------------------------------------- single block math

def direction_market(block, direction, fee_rate, base_gas_fee=0.0):
    """The block's market seen from one trading direction (deposited asset plays A)."""
    if direction is Direction.DEPOSIT_A:
        pool = PoolState(block.reserve_a_prev, block.reserve_b_prev, fee_rate)
        return MarketParams(pool, block.cex_price_a, block.cex_price_b, base_gas_fee)
    pool = PoolState(block.reserve_b_prev, block.reserve_a_prev, fee_rate)
    return MarketParams(pool, block.cex_price_b, block.cex_price_a, base_gas_fee)


def gas_token_price(block, gas_token_is_asset_a=True):
    """USD price of the token gas is paid in."""
    return block.cex_price_a if gas_token_is_asset_a else block.cex_price_b


def base_gas_fee_usd(block, gas_used_estimate, gas_token_is_asset_a=True):
    return block.base_fee_per_gas * gas_used_estimate * gas_token_price(block, gas_token_is_asset_a)


def detect_arbitrage(block, gas_used_estimate=107_176, fee_rate=0.003, gas_token_is_asset_a=True):
    """Direction with O > 1 and g-hat_H above the estimated base gas fee, if any."""
    base = base_gas_fee_usd(block, gas_used_estimate, gas_token_is_asset_a)
    candidates = []
    for direction in Direction:
        derived = derived_quantities(direction_market(block, direction, fee_rate, base))
        candidates.append((direction, derived))
    # O > 1 in at most one direction since the two O's multiply to 1/(1+f)^2
    direction, derived = max(candidates, key=lambda c: c[1].opportunity)
    qualifies = derived.opportunity > 1.0 and derived.max_gas_fee > base
    return ArbitrageVerdict(
        direction=direction if qualifies else None,
        max_gas_fee_usd=derived.max_gas_fee,
        base_gas_fee_usd=base,
        opportunity=derived.opportunity,
        liquidity_b=derived.liquidity_b,
        optimal_amount=derived.optimal_amount,
    )


def swap_legs(swap):
    """Signed (d_A, d_B) pool deltas; positive is a deposit."""
    if swap.deposit_side is Direction.DEPOSIT_A:
        return swap.amount_in, -swap.amount_out
    return -swap.amount_out, swap.amount_in


def gas_fee_usd(block, swap, gas_token_is_asset_a=True):
    return swap.gas_used * swap.gas_price * gas_token_price(block, gas_token_is_asset_a)


def swap_profit(block, swap, fee_rate=0.003, gas_token_is_asset_a=True):
    """Net USD profit of an observed swap, legs unwound at the block's CEX prices."""
    if swap.block_number != block.block_number:
        raise InvalidArgumentError(
            f"swap of block {swap.block_number} priced against block {block.block_number}")
    d_a, d_b = swap_legs(swap)
    return trade_value(d_a, d_b, block.cex_price_a, block.cex_price_b, fee_rate,
                       gas_fee_usd(block, swap, gas_token_is_asset_a))


def product_rule_mismatch(block, swap, fee_rate=0.003):
    """Relative gap between amount_out and the constant-product quote on the block's reserves."""
    pool = direction_market(block, swap.deposit_side, fee_rate).pool
    quoted = -quote_delta_b(pool, swap.amount_in)
    return abs(swap.amount_out - quoted) / quoted


def relative_amount(block, swap):
    d_a, d_b = swap_legs(swap)
    return max(abs(d_a) / block.reserve_a_prev, abs(d_b) / block.reserve_b_prev)


# ------------------------------------------------------------ classification

@dataclass
class Classification:
    verdicts: dict
    labels: list
    rejects: list
    warnings: int

    def arbitrage_counts(self, swaps):
        """Arbitrage swaps per block number."""
        counts = {number: 0 for number in self.verdicts}
        for swap, label in zip(swaps, self.labels):
            if label is SwapLabel.ARBITRAGE:
                counts[swap.block_number] += 1
        return counts


def classify_swaps(blocks, swaps, cfg=None, workers=DETECT_WORKERS):
    """
    Label every swap ARBITRAGE, OTHER or ORPHAN.

    A swap is an arbitrage swap when its block has an opportunity and the
    swap deposits the asset the opportunity asks for. Orphans (no matching
    block) are listed in rejects.
    """
    cfg = cfg or PipelineConfig()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        verdict_list = list(executor.map(
            lambda b: detect_arbitrage(b, cfg.gas_used_estimate, cfg.fee_rate,
                                     cfg.gas_token_is_asset_a), blocks))
    verdicts = {b.block_number: v for b, v in zip(blocks, verdict_list)}
    by_number = {b.block_number: b for b in blocks}

    labels, rejects, warnings = [], [], 0
    for i, swap in enumerate(swaps):
        block = by_number.get(swap.block_number)
        if block is None:
            labels.append(SwapLabel.ORPHAN)
            rejects.append({'row': i, 'block_number': swap.block_number,
                            'reason': f"orphan swap: block {swap.block_number} not in blocks file"})
            continue
        mismatch = product_rule_mismatch(block, swap, cfg.fee_rate)
        if mismatch > cfg.product_rule_tolerance:
            warnings += 1
            logger.warning("Swap %d in block %d deviates %.1f%% from the product rule",
                           i, swap.block_number, 100 * mismatch)
        direction = verdicts[swap.block_number].direction
        labels.append(SwapLabel.ARBITRAGE if direction is swap.deposit_side else SwapLabel.OTHER)

    n_arbitrage = sum(1 for label in labels if label is SwapLabel.ARBITRAGE)
    logger.info("Classified %d swaps: %d arbitrage, %d rejected", len(swaps), n_arbitrage,
                len(rejects))
    return Classification(verdicts, labels, rejects, warnings)


# ----------------------------------------------------------------- durations

def _check_consecutive(numbers):
    gaps = [(a + 1, b - 1) for a, b in zip(numbers, numbers[1:]) if b - a > 1]
    if gaps:
        raise BlockGapError(gaps)
    if len(set(numbers)) != len(numbers):
        raise InvalidArgumentError("duplicate block numbers")


def _run_summary(lengths):
    if not lengths:
        return {'runs': 0, 'mean': None, 'std': None, 'histogram': {'1': 0, '2': 0, '>=3': 0}}
    lengths = np.asarray(lengths)
    return {
        'runs': int(len(lengths)),
        'mean': float(lengths.mean()),
        'std': float(lengths.std()),
        'histogram': {
            '1': int((lengths == 1).sum()),
            '2': int((lengths == 2).sum()),
            '>=3': int((lengths >= 3).sum()),
        },
    }


def run_lengths(directions):
    """(arbitrage run lengths, non-arbitrage run lengths) of a verdict direction sequence."""
    arbitrage, other = [], []
    for direction, run in groupby(directions):
        (other if direction is None else arbitrage).append(sum(1 for _ in run))
    return arbitrage, other


def duration_stats(numbers, directions):
    """Mean, population std and {1, 2, >=3} histogram of run lengths per class."""
    _check_consecutive(list(numbers))
    arbitrage, other = run_lengths(list(directions))
    return {'arbitrage': _run_summary(arbitrage), 'non_arbitrage': _run_summary(other)}


# ---------------------------------------------------------------- regression

@dataclass(frozen=True)
class RegressionResult:
    names: tuple
    coefficients: tuple
    std_errors: tuple
    r_squared: float
    observations: int

    def to_dict(self):
        return {
            'coefficients': dict(zip(self.names, self.coefficients)),
            'std_errors': {name: None if math.isnan(s) else s
                           for name, s in zip(self.names, self.std_errors)},
            'r_squared': self.r_squared,
            'observations': self.observations,
        }


def _dependent_columns(matrix, names):
    offending, rank = [], 0
    for k in range(matrix.shape[1]):
        new_rank = np.linalg.matrix_rank(matrix[:, :k + 1])
        if new_rank == rank:
            offending.append(names[k])
        rank = new_rank
    return offending


def ols_standardized(design, response, names=None):
    """
    Least squares after scaling every variable to zero mean and unit variance.

    Solved through the normal equations with a Cholesky factorization; the
    reported intercept is zero up to rounding.
    """
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(response, dtype=float)
    n, p = x.shape
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(p)]
    if len(names) != p or len(y) != n:
        raise InvalidArgumentError("design, response and names disagree in size")
    if n < p + 1:
        raise InvalidArgumentError(f"{n} observations cannot fit {p} regressors and a constant")

    spread = x.std(axis=0)
    flat = [name for name, s in zip(names, spread) if not s > 0]
    if flat:
        raise SingularDesignError(flat)
    if not y.std() > 0:
        raise InvalidArgumentError("response has zero variance")

    z = (x - x.mean(axis=0)) / spread
    target = (y - y.mean()) / y.std()
    full = np.column_stack([np.ones(n), z])
    full_names = ['const'] + names
    offending = _dependent_columns(full, full_names)
    if offending:
        raise SingularDesignError(offending)

    try:
        factor = cho_factor(full.T @ full)
    except LinAlgError:
        raise SingularDesignError(names)
    beta = cho_solve(factor, full.T @ target)
    residual = target - full @ beta
    rss = float(residual @ residual)
    dof = n - (p + 1)
    sigma2 = rss / dof if dof > 0 else math.nan
    inverse = cho_solve(factor, np.eye(p + 1))
    std_errors = np.sqrt(sigma2 * np.diag(inverse))
    return RegressionResult(
        names=tuple(full_names),
        coefficients=tuple(float(b) for b in beta),
        std_errors=tuple(float(s) for s in std_errors),
        r_squared=1.0 - rss / float(target @ target),
        observations=n,
    )


# ------------------------------------------------------------------- reports

def swap_frame(blocks, swaps, classification, cfg=None):
    """One row per labelled arbitrage swap with the regression variables."""
    cfg = cfg or PipelineConfig()
    by_number = {b.block_number: b for b in blocks}
    counts = classification.arbitrage_counts(swaps)
    rows = []
    for swap, label in zip(swaps, classification.labels):
        if label is not SwapLabel.ARBITRAGE:
            continue
        block = by_number[swap.block_number]
        verdict = classification.verdicts[swap.block_number]
        rows.append({
            'block_number': swap.block_number,
            'arbitrage_swaps_in_block': counts[swap.block_number],
            'priority_fee_per_gas': swap.priority_fee_per_gas,
            'relative_amount': relative_amount(block, swap),
            'amount_in': swap.amount_in,
            'optimal_amount': verdict.optimal_amount,
            'max_gas_fee': verdict.max_gas_fee_usd,
            'base_gas_fee': verdict.base_gas_fee_usd,
            'liquidity': verdict.liquidity_b,
            'opportunity': verdict.opportunity,
            'gas_fee': gas_fee_usd(block, swap, cfg.gas_token_is_asset_a),
            'profit': swap_profit(block, swap, cfg.fee_rate, cfg.gas_token_is_asset_a),
        })
    return pd.DataFrame(rows)


REGRESSIONS = {
    'relative_amount_on_gas_fee': ('relative_amount',
                                   ['base_gas_fee', 'liquidity', 'opportunity', 'gas_fee'],
                                   'priority'),
    'relative_amount_crowded': ('relative_amount', ['base_gas_fee', 'liquidity', 'opportunity'],
                                'crowded'),
    'profit': ('profit', ['base_gas_fee', 'liquidity', 'opportunity'], 'priority'),
    'gas_fee_crowded': ('gas_fee', ['base_gas_fee', 'liquidity', 'opportunity'], 'crowded'),
}


def run_regressions(frame):
    """
    The four standardized regressions on arbitrage swaps.

    "priority" uses swaps paying a priority fee; "crowded" uses swaps in
    blocks with more than two arbitrage swaps.
    """
    results = {}
    for name, (response, regressors, subset) in REGRESSIONS.items():
        if frame.empty:
            data = frame
        elif subset == 'priority':
            data = frame[frame['priority_fee_per_gas'] > 0]
        else:
            data = frame[frame['arbitrage_swaps_in_block'] > 2]
        try:
            if data.empty:
                raise InvalidArgumentError("no observations")
            fit = ols_standardized(data[regressors].to_numpy(), data[response].to_numpy(),
                                   regressors)
            results[name] = {'success': True, 'error': '', 'response': response, **fit.to_dict()}
        except (InvalidArgumentError, SingularDesignError) as e:
            logger.warning("Regression %s failed: %s", name, e)
            results[name] = {'success': False, 'error': str(e), 'response': response,
                             'observations': int(len(data))}
    return results


def _bucket(count, top):
    return str(count) if count < top else f">={top}"


def _share(part, whole):
    return part / whole if whole else None


def block_tables(blocks, swaps, classification):
    """Block counts by arbitrage-swap count and by swap count, plus per-class totals."""
    arbitrage_counts = classification.arbitrage_counts(swaps)
    swap_counts = {b.block_number: 0 for b in blocks}
    for swap, label in zip(swaps, classification.labels):
        if label is not SwapLabel.ORPHAN:
            swap_counts[swap.block_number] += 1

    keys = ['0', '1', '2', '>=3']
    by_arbitrage = {'arbitrage': dict.fromkeys(keys, 0), 'non_arbitrage': dict.fromkeys(keys, 0)}
    by_swaps = {'arbitrage': dict.fromkeys(keys, 0), 'non_arbitrage': dict.fromkeys(keys, 0)}
    totals = {cls: {'blocks': 0, 'swaps': 0, 'arbitrage_swaps': 0}
              for cls in ('arbitrage', 'non_arbitrage')}
    for block in blocks:
        number = block.block_number
        cls = 'non_arbitrage' if classification.verdicts[number].direction is None else 'arbitrage'
        by_arbitrage[cls][_bucket(arbitrage_counts[number], 3)] += 1
        by_swaps[cls][_bucket(swap_counts[number], 3)] += 1
        totals[cls]['blocks'] += 1
        totals[cls]['swaps'] += swap_counts[number]
        totals[cls]['arbitrage_swaps'] += arbitrage_counts[number]

    for cls, row in totals.items():
        row['average_non_arbitrage_swaps'] = _share(row['swaps'] - row['arbitrage_swaps'],
                                                    row['blocks'])
    n_arb, n_non = totals['arbitrage']['blocks'], totals['non_arbitrage']['blocks']
    proportion = {
        'arbitrage_swap_count_0': _share(by_arbitrage['arbitrage']['0'],
                                         by_arbitrage['arbitrage']['0'] + by_arbitrage['non_arbitrage']['0']),
        'total': _share(n_arb, n_arb + n_non),
        'swap_count': {k: _share(by_swaps['arbitrage'][k],
                                 by_swaps['arbitrage'][k] + by_swaps['non_arbitrage'][k])
                       for k in keys},
    }
    return {
        'blocks_by_arbitrage_swaps': {**by_arbitrage, 'arbitrage_total': n_arb,
                                      'non_arbitrage_total': n_non},
        'blocks_by_swaps': by_swaps,
        'arbitrage_block_proportion': proportion,
        'block_and_swap_counts': totals,
    }


def profitability_table(blocks, swaps, classification, cfg=None):
    """Profitable and non-profitable swaps by the block's arbitrage-swap count."""
    cfg = cfg or PipelineConfig()
    by_number = {b.block_number: b for b in blocks}
    counts = classification.arbitrage_counts(swaps)
    rows = {key: {'profitable': 0, 'non_profitable': 0} for key in ('1', '2', '3', '>3')}
    other = {'profitable': 0, 'non_profitable': 0}
    for swap, label in zip(swaps, classification.labels):
        if label is SwapLabel.ORPHAN:
            continue
        profitable = swap_profit(by_number[swap.block_number], swap, cfg.fee_rate,
                                 cfg.gas_token_is_asset_a) > 0
        column = 'profitable' if profitable else 'non_profitable'
        if label is SwapLabel.ARBITRAGE:
            n = counts[swap.block_number]
            rows[str(n) if n <= 3 else '>3'][column] += 1
        else:
            other[column] += 1
    subtotal = {c: sum(row[c] for row in rows.values()) for c in other}
    total = {c: subtotal[c] + other[c] for c in other}
    table = {**{f"arbitrage_{k}": v for k, v in rows.items()}, 'arbitrage_subtotal': subtotal,
             'non_arbitrage': other, 'total': total}
    for row in table.values():
        row['profitability'] = _share(row['profitable'], row['profitable'] + row['non_profitable'])
    return table


def first_mover_shares(frame):
    """Shares of arbitrage swaps below the first mover's optimal amount and break-even gas fee."""
    if frame.empty:
        return {'amount_below_optimal': None, 'gas_below_first_mover_return': None}
    return {
        'amount_below_optimal': float((frame['amount_in'] < frame['optimal_amount']).mean()),
        'gas_below_first_mover_return': float((frame['gas_fee'] < frame['max_gas_fee']).mean()),
    }


def analyze(blocks, swaps, cfg=None):
    """Run the whole pipeline; returns (tables, regressions, rejects)."""
    cfg = cfg or PipelineConfig()
    classification = classify_swaps(blocks, swaps, cfg)
    numbers = [b.block_number for b in blocks]
    directions = [classification.verdicts[n].direction for n in numbers]
    frame = swap_frame(blocks, swaps, classification, cfg)
    tables = {
        **block_tables(blocks, swaps, classification),
        'durations': duration_stats(numbers, directions),
        'profitability': profitability_table(blocks, swaps, classification, cfg),
        'first_mover_bounds': first_mover_shares(frame),
        'data_quality_warnings': classification.warnings,
        'config': asdict(cfg),
    }
    return tables, run_regressions(frame), classification.rejects


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    block = BlockRecord(1, 1000.0, 4.2e6, 0.0, 2100.0, 1.0)
    verdict = detect_arbitrage(block)
    print(f"direction: {verdict.direction}, O = {verdict.opportunity:.4f}")
