#!/usr/bin/env python3
"""
Validate a pair of block/swap fixture files before running the pipeline.
This script checks every row and reports what the analysis would reject.
"""

import argparse
import sys

from empirics import (BLOCK_COLUMNS, SWAP_COLUMNS, block_from_row, product_rule_mismatch,
                      read_fixture_csv, swap_from_row)
from errors import GasGameError
from settings import PipelineConfig


def _parse_rows(frame, parse):
    records, problems = [], []
    for i, row in enumerate(frame.to_dict('records'), 2):
        try:
            records.append(parse(row))
        except (GasGameError, ValueError, TypeError) as e:
            problems.append({'line': i, 'error': str(e)})
    return records, problems


def _missing_ranges(numbers):
    numbers = sorted(set(numbers))
    return [(a + 1, b - 1) for a, b in zip(numbers, numbers[1:]) if b - a > 1]


def check_fixtures(blocks_path, swaps_path, cfg=None):
    """Collect every problem in the two fixture files into a result dict."""
    cfg = cfg or PipelineConfig()
    try:
        block_frame = read_fixture_csv(blocks_path, BLOCK_COLUMNS)
        swap_frame = read_fixture_csv(swaps_path, SWAP_COLUMNS)
    except GasGameError as e:
        return {'success': False, 'error': str(e)}

    blocks, bad_blocks = _parse_rows(block_frame, block_from_row)
    swaps, bad_swaps = _parse_rows(swap_frame, swap_from_row)
    by_number = {}
    duplicates = []
    for block in blocks:
        if block.block_number in by_number:
            duplicates.append(block.block_number)
        by_number[block.block_number] = block

    orphans = sorted({s.block_number for s in swaps if s.block_number not in by_number})
    mismatches = []
    for swap in swaps:
        block = by_number.get(swap.block_number)
        if block is None:
            continue
        mismatch = product_rule_mismatch(block, swap, cfg.fee_rate)
        if mismatch > cfg.product_rule_tolerance:
            mismatches.append({'block_number': swap.block_number, 'mismatch': mismatch})

    gaps = _missing_ranges(by_number)
    return {
        'success': not (bad_blocks or bad_swaps or duplicates or orphans or gaps),
        'error': '',
        'blocks': len(blocks),
        'swaps': len(swaps),
        'invalid_block_rows': bad_blocks,
        'invalid_swap_rows': bad_swaps,
        'duplicate_blocks': duplicates,
        'orphan_blocks': orphans,
        'gaps': gaps,
        'product_rule_warnings': mismatches,
    }


def validate_fixtures(blocks_path, swaps_path, cfg=None):
    """Check the fixture files and print a summary with recommendations."""
    print(f"Checking {blocks_path} and {swaps_path}...")
    result = check_fixtures(blocks_path, swaps_path, cfg)

    print("\n" + "=" * 60)
    print("VALIDATION SUMMARY")
    print("=" * 60)
    if result.get('error'):
        print(f"✗ FAILED: {result['error']}")
        return result

    print(f"Blocks: {result['blocks']}")
    print(f"Swaps: {result['swaps']}")
    print(f"Invalid block rows: {len(result['invalid_block_rows'])}")
    print(f"Invalid swap rows: {len(result['invalid_swap_rows'])}")
    print(f"Orphan swap blocks: {len(result['orphan_blocks'])}")
    print(f"Block number gaps: {len(result['gaps'])}")
    print(f"Product-rule warnings: {len(result['product_rule_warnings'])}")

    if result['success'] and not result['product_rule_warnings']:
        print("\n✓ Fixtures are consistent and ready for analysis")
        return result

    print("\n⚠️  PROBLEMS:")
    print("-" * 60)
    for item in result['invalid_block_rows']:
        print(f"❌ blocks line {item['line']}: {item['error']}")
    for item in result['invalid_swap_rows']:
        print(f"❌ swaps line {item['line']}: {item['error']}")
    for number in result['duplicate_blocks']:
        print(f"❌ block {number} appears more than once")
    for number in result['orphan_blocks']:
        print(f"❌ swaps reference block {number}, which is not in the blocks file")
    for lo, hi in result['gaps']:
        print(f"❌ missing blocks {lo}-{hi}")
    for item in result['product_rule_warnings']:
        print(f"⚠️  block {item['block_number']}: amount_out off the product rule by "
              f"{100 * item['mismatch']:.1f}%")

    print("\n" + "=" * 60)
    print("RECOMMENDATIONS:")
    print("=" * 60)
    print("1. Export one row per block, with no gaps in block_number")
    print("2. Drop swaps whose block is missing, or add the block")
    print("3. Reserves must be the pool state after the previous block")
    print("4. Large product-rule mismatches usually mean swapped amount columns")
    return result


def main(argv=None):
    parser = argparse.ArgumentParser(description="Validate block/swap fixture files")
    parser.add_argument('--blocks', required=True, help="blocks CSV")
    parser.add_argument('--swaps', required=True, help="swaps CSV")
    args = parser.parse_args(argv)
    result = validate_fixtures(args.blocks, args.swaps)
    return 0 if result['success'] else 2


if __name__ == "__main__":
    sys.exit(main())
