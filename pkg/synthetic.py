"""
Synthetic inputs for the empirical pipeline.

planted_* builds a 20-block fixture whose arbitrage blocks, directions and
arbitrage-swap counts are known in advance. Every number is a closed-form
function of the block index, so the shipped CSVs can be regenerated
anywhere. geometric_directions draws verdict sequences with geometric run
lengths for checking the duration statistics.
"""

import logging
import os

import numpy as np
import pandas as pd

from empirics import (BLOCK_COLUMNS, SWAP_COLUMNS, BlockRecord, Direction, SwapLabel,
                      SwapRecord)
from errors import InvalidArgumentError

logger = logging.getLogger(__name__)

PLANTED_FIRST_BLOCK = 100
# N: no opportunity, A: deposit A, B: deposit B
PLANTED_DIRECTIONS = "NAANNBNNNABNNNAANNBN"
PLANTED_ARBITRAGE_SWAPS = {101: 3, 102: 3, 105: 3, 109: 3, 110: 2, 114: 2, 115: 1, 118: 0}
SWAPS_PER_BLOCK = 3
ARBITRAGE_FRACTIONS = (0.010, 0.016, 0.022)
POOL_FEE_FACTOR = 0.997
CSV_FLOAT_FORMAT = '%.10g'


def _direction(code):
    return None if code == 'N' else Direction(code)


def _opposite(direction):
    return Direction.DEPOSIT_B if direction is Direction.DEPOSIT_A else Direction.DEPOSIT_A


def planted_block(k):
    """Block PLANTED_FIRST_BLOCK + k."""
    reserve_a = 1000.0 + 10.0 * k
    price_a = 2000.0 + 5.0 * k
    balanced = reserve_a * price_a
    tilt = 1.04 + 0.005 * (k % 3)
    direction = _direction(PLANTED_DIRECTIONS[k])
    if direction is Direction.DEPOSIT_A:
        reserve_b = balanced * tilt
    elif direction is Direction.DEPOSIT_B:
        reserve_b = balanced / tilt
    else:
        reserve_b = balanced
    return BlockRecord(PLANTED_FIRST_BLOCK + k, reserve_a, reserve_b,
                       1e-9 * (20 + (3 * k) % 7), price_a, 1.0)


def planted_blocks():
    return [planted_block(k) for k in range(len(PLANTED_DIRECTIONS))]


def _planted_swap(block, k, j):
    direction = _direction(PLANTED_DIRECTIONS[k])
    n_arbitrage = PLANTED_ARBITRAGE_SWAPS.get(block.block_number, 0)
    is_arbitrage = direction is not None and j < n_arbitrage
    if direction is None:
        side = Direction.DEPOSIT_A if (k + j) % 2 == 0 else Direction.DEPOSIT_B
    else:
        side = direction if is_arbitrage else _opposite(direction)

    if side is Direction.DEPOSIT_A:
        reserve_in, reserve_out = block.reserve_a_prev, block.reserve_b_prev
    else:
        reserve_in, reserve_out = block.reserve_b_prev, block.reserve_a_prev
    fraction = ARBITRAGE_FRACTIONS[j] if is_arbitrage else 0.002 * (1 + j)
    amount_in = reserve_in * fraction
    amount_out = reserve_out * amount_in * POOL_FEE_FACTOR / (reserve_in + amount_in * POOL_FEE_FACTOR)

    if is_arbitrage:
        priority = 0.0 if (k + j) % 8 == 4 else 1e-9 * (1 + (k + j) % 4)
    else:
        priority = 1e-9 * ((k + j) % 3)
    swap = SwapRecord(block.block_number, side, amount_in, amount_out,
                      107_176 + 1000 * (((k + 2 * j) % 5) - 2),
                      block.base_fee_per_gas + priority, priority)
    return swap, SwapLabel.ARBITRAGE if is_arbitrage else SwapLabel.OTHER


def planted_swaps_and_labels():
    """Swaps in block order, with the label each one was planted with."""
    pairs = [_planted_swap(block, k, j)
             for k, block in enumerate(planted_blocks())
             for j in range(SWAPS_PER_BLOCK)]
    return [swap for swap, _ in pairs], [label for _, label in pairs]


def planted_frames():
    """(blocks, swaps) DataFrames with the fixture column order."""
    blocks = pd.DataFrame([vars(b) for b in planted_blocks()], columns=BLOCK_COLUMNS)
    swaps, _ = planted_swaps_and_labels()
    rows = [{**vars(s), 'deposit_side': s.deposit_side.value, 'gas_used': int(s.gas_used)}
            for s in swaps]
    return blocks, pd.DataFrame(rows, columns=SWAP_COLUMNS)


def write_planted_fixture(out_dir):
    """Write blocks.csv and swaps.csv into out_dir; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    blocks, swaps = planted_frames()
    paths = (os.path.join(out_dir, 'blocks.csv'), os.path.join(out_dir, 'swaps.csv'))
    for frame, path in zip((blocks, swaps), paths):
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        logger.info("Wrote %d rows to %s", len(frame), path)
    return paths


def geometric_directions(runs, arbitrage_mean, other_mean, rng_seed):
    """
    Verdict directions made of alternating non-arbitrage and arbitrage runs.

    Run lengths are geometric with the given means; each arbitrage run picks
    its direction at random.
    """
    if arbitrage_mean < 1 or other_mean < 1:
        raise InvalidArgumentError("geometric run means must be at least 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    directions = []
    for _ in range(runs):
        directions.extend([None] * int(rng.geometric(1.0 / other_mean)))
        side = Direction.DEPOSIT_A if rng.random() < 0.5 else Direction.DEPOSIT_B
        directions.extend([side] * int(rng.geometric(1.0 / arbitrage_mean)))
    return directions
