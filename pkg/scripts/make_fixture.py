#!/usr/bin/env python3
"""Regenerate the planted block/swap fixture.

The planted fixture has 20 consecutive blocks, 8 of them with an arbitrage
opportunity, and 3 swaps per block. Its expected table counts are fixed, so
the analyze golden test depends on these files staying byte-identical.

Usage:
  python scripts/make_fixture.py --out fixtures/
"""

import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from synthetic import PLANTED_ARBITRAGE_SWAPS, write_planted_fixture  # noqa: E402


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write the planted blocks.csv and swaps.csv")
    parser.add_argument('--out', default='fixtures', help='output directory (default: fixtures)')
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format='%(levelname)s %(name)s: %(message)s')
    blocks_path, swaps_path = write_planted_fixture(args.out)
    print(f"✓ {blocks_path}")
    print(f"✓ {swaps_path}")
    print(f"Planted arbitrage blocks: {len(PLANTED_ARBITRAGE_SWAPS)}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
