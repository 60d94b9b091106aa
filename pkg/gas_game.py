#!/usr/bin/env python3
"""
Gas-fee game toolkit

Subcommands:
1. solve    - solve the symmetric mixed equilibrium for a market config
2. verify   - check a stored solution (flatness, deviations, Monte Carlo, oracle)
3. sweep    - comparative statics along one market parameter
4. figures  - participation margin, alpha* and DDFs across an O grid
5. analyze  - arbitrage detection and statistics over block/swap fixtures

Every subcommand writes its outputs and a manifest.json into --out.
Exit codes: 0 ok, 2 invalid input, 3 solver failure, 4 verification failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import pandas as pd

import equilibrium
import game_verify
import statics
from empirics import analyze, load_blocks, load_swaps
from errors import (BlockGapError, BracketMissingError, GasGameError, InvalidArgumentError,
                    NoTradeError, NonConvergenceError, SingularDesignError,
                    UnsupportedOpportunityError)
from run_manifest import RunManifest, write_csv, write_json
from settings import (load_config, log_level, market_from_config, market_to_config,
                      pipeline_config_from, solver_config_from, verify_config_from,
                      VerifyConfig)

logger = logging.getLogger('gas_game')

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

SOLVER_FLAGS = ('initial_step', 'max_step', 'step_shrink_coeff', 'root_tolerance',
                'residual_tolerance', 'max_nodes', 'max_v_increment', 'bracket_margin')


def _banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _solver_config(args, config=None):
    overrides = {name: getattr(args, name, None) for name in SOLVER_FLAGS}
    return solver_config_from(config, **overrides)


def parse_grid(text):
    """'a,b,c' or 'start:stop:step' (stop included) into a tuple of floats."""
    try:
        if ':' in text:
            start, stop, step = (float(part) for part in text.split(':'))
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            count = int(round((stop - start) / step)) + 1
            return tuple(round(start + i * step, 12) for i in range(count))
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError as e:
        raise InvalidArgumentError(f"grid {text!r}: {e}")


# ---------------------------------------------------------------- solve

def cmd_solve(args):
    _banner("Solving equilibrium")
    config = load_config(args.config)
    market = market_from_config(config)
    solver = _solver_config(args, config)
    manifest = RunManifest(args.out, 'solve')
    manifest.add_input(args.config)
    manifest.set_config({'market': market_to_config(market), 'solver': asdict(solver),
                         'ddf_points': args.ddf_points})

    sol = equilibrium.solve_equilibrium(market, solver)
    derived = sol.derived
    outputs = [
        write_json(os.path.join(args.out, 'solution.json'), equilibrium.solution_to_dict(sol)),
        write_csv(os.path.join(args.out, 'gas_ddf.csv'), equilibrium.gas_ddf_table(
            sol, equilibrium.default_gas_abscissae(derived.max_gas_fee, args.ddf_points))),
        write_csv(os.path.join(args.out, 'amount_ddf.csv'), equilibrium.amount_ddf_table(
            sol, equilibrium.default_amount_abscissae(args.ddf_points))),
    ]
    for path in outputs:
        manifest.add_output(path)
    manifest.save()

    print(f"Case: {sol.case_tag.value}")
    print(f"Trading probability alpha*: {sol.alpha_star:.6f}")
    print(f"Support: [{market.base_gas_fee:.6g}, {sol.g_h:.6g}] USD")
    print(f"Expected profit: {sol.expected_profit:.6g} USD")
    print(f"✓ Wrote {len(outputs)} files to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------- verify

def _load_solution(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidArgumentError(f"solution file not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"malformed solution JSON in {path}: {e}")
    return equilibrium.solution_from_dict(data)


def _check(name, value, threshold, **details):
    value, threshold = float(value), float(threshold)
    return {'name': name, 'value': value, 'threshold': threshold,
            'success': bool(value <= threshold), **details}


def verification_checks(sol, args, thresholds=None):
    """Every verification check as a named result dict of plain JSON types."""
    thresholds = thresholds or VerifyConfig()
    derived = sol.derived
    g_high, g_low = derived.max_gas_fee, sol.market.base_gas_fee
    checks = [
        _check('flatness', game_verify.flatness_deviation(sol),
               thresholds.flatness_rel * max(g_high - g_low, sol.liquidity_b * 1e-6)),
        _check('best_deviation_gap',
               game_verify.best_deviation_gap(sol, args.gas_grid, args.amount_grid),
               thresholds.deviation_gap_rel * g_high),
    ]

    report = game_verify.monte_carlo_payoff(sol, args.mc_samples, args.seed)
    checks.append(_check('monte_carlo', abs(report.mean_payoff - sol.expected_profit),
                         thresholds.monte_carlo_band * report.std_error,
                         simulation=report.to_dict()))

    if args.oracle_iterations > 0:
        oracle = game_verify.discretized_game_oracle(sol.market, args.oracle_gas_levels,
                                                     args.oracle_amount_levels,
                                                     args.oracle_iterations, args.seed)
        checks.append(_check('oracle_regret', oracle.regret,
                             thresholds.oracle_regret_rel * g_high, oracle=oracle.to_dict()))
    return checks


def cmd_verify(args):
    _banner("Verifying equilibrium")
    sol = _load_solution(args.solution)
    thresholds = verify_config_from(load_config(args.config) if args.config else None)
    manifest = RunManifest(args.out, 'verify')
    manifest.add_input(args.solution)
    if args.config:
        manifest.add_input(args.config)
    manifest.set_seed('verify', args.seed)
    manifest.set_config({'thresholds': asdict(thresholds),
                         'gas_grid': args.gas_grid, 'amount_grid': args.amount_grid,
                         'mc_samples': args.mc_samples,
                         'oracle_gas_levels': args.oracle_gas_levels,
                         'oracle_amount_levels': args.oracle_amount_levels,
                         'oracle_iterations': args.oracle_iterations})

    checks = verification_checks(sol, args, thresholds)
    failing = [c['name'] for c in checks if not c['success']]
    path = write_json(os.path.join(args.out, 'verification.json'),
                      {'checks': checks, 'failing': failing, 'success': not failing})
    manifest.add_output(path)
    manifest.save()

    for check in checks:
        mark = '✓' if check['success'] else '✗'
        print(f"{mark} {check['name']}: {check['value']:.6g} (threshold {check['threshold']:.6g})")
    if failing:
        print(f"\nFailing checks: {', '.join(failing)}")
        return EXIT_VERIFY
    print("\n✓ All checks passed")
    return EXIT_OK


# ------------------------------------------------------ sweep / figures

def _write_tables(out_dir, prefix, tables, manifest):
    for name, frame in zip(('scalars', 'gas_ddf', 'amount_ddf'), tables):
        manifest.add_output(write_csv(os.path.join(out_dir, f"{prefix}_{name}.csv"), frame))


def cmd_sweep(args):
    _banner(f"Sweeping {args.vary}")
    config = load_config(args.config)
    market = market_from_config(config)
    solver = _solver_config(args, config)
    spec = statics.sweep_spec(args.vary, parse_grid(args.grid), market, args.ddf_points)
    manifest = RunManifest(args.out, 'sweep')
    manifest.add_input(args.config)
    manifest.set_config({'market': market_to_config(market), 'solver': asdict(solver),
                         'vary': args.vary, 'grid': list(spec.grid)})

    rows = statics.run_sweep(spec, solver)
    _write_tables(args.out, 'sweep', statics.sweep_tables(spec, rows), manifest)
    manifest.save()
    solved = sum(1 for row in rows if row['success'])
    print(f"✓ Solved {solved}/{len(rows)} grid points")
    return EXIT_OK


def cmd_figures(args):
    _banner("Figure data")
    if args.config:
        config = load_config(args.config)
        template = market_from_config(config)
    else:
        config, template = None, statics.reference_market()
    solver = _solver_config(args, config)
    o_grid = parse_grid(args.o_grid)
    manifest = RunManifest(args.out, 'figures')
    if args.config:
        manifest.add_input(args.config)
    manifest.set_config({'market': market_to_config(template), 'solver': asdict(solver),
                         'o_grid': list(o_grid)})

    tables = statics.figure_data(o_grid, template, solver)
    _write_tables(args.out, 'figure', tables, manifest)
    o_bar = statics.opportunity_threshold(template, solver)
    summary = {'opportunity_threshold': o_bar}
    if args.statics_checks:
        checks = statics.comparative_statics_checks(template, solver)
        summary['comparative_statics'] = checks
        failed = [c['check'] for c in checks if not c['success']]
        print(f"Comparative statics: {len(checks) - len(failed)}/{len(checks)} checks passed")
        for name in failed:
            print(f"  ✗ {name}")
    manifest.add_output(write_json(os.path.join(args.out, 'figure_summary.json'), summary))
    manifest.save()
    if o_bar is not None:
        print(f"Full participation from O = {o_bar:.6f}")
    print(f"✓ Wrote figure tables for {len(o_grid)} O values")
    return EXIT_OK


# -------------------------------------------------------------- analyze

def cmd_analyze(args):
    _banner("Analyzing fixtures")
    config = load_config(args.config) if args.config else {}
    cfg = pipeline_config_from(config)
    blocks = load_blocks(args.blocks)
    swaps = load_swaps(args.swaps)
    manifest = RunManifest(args.out, 'analyze')
    manifest.add_input(args.blocks)
    manifest.add_input(args.swaps)
    manifest.set_config({'pipeline': asdict(cfg)})

    tables, regressions, rejects = analyze(blocks, swaps, cfg)
    rejects_frame = pd.DataFrame(rejects, columns=['row', 'block_number', 'reason'])
    for path in (write_json(os.path.join(args.out, 'tables_2_3_4.json'), tables),
                 write_json(os.path.join(args.out, 'regressions.json'), regressions),
                 write_csv(os.path.join(args.out, 'rejects.csv'), rejects_frame)):
        manifest.add_output(path)
    manifest.save()

    counts = tables['block_and_swap_counts']
    print(f"Blocks: {len(blocks)} ({counts['arbitrage']['blocks']} with arbitrage)")
    print(f"Swaps: {len(swaps)} ({counts['arbitrage']['arbitrage_swaps']} arbitrage swaps)")
    print(f"Rejected swaps: {len(rejects)}")
    if tables['data_quality_warnings']:
        print(f"⚠️  {tables['data_quality_warnings']} swaps deviate from the product rule")
    return EXIT_OK


# ----------------------------------------------------------------- main

def _add_solver_flags(parser):
    group = parser.add_argument_group('solver')
    group.add_argument('--initial-step', type=float)
    group.add_argument('--max-step', type=float)
    group.add_argument('--step-shrink-coeff', type=float)
    group.add_argument('--root-tolerance', type=float)
    group.add_argument('--residual-tolerance', type=float)
    group.add_argument('--max-nodes', type=int)
    group.add_argument('--max-v-increment', type=float)
    group.add_argument('--bracket-margin', type=float)


def build_parser():
    parser = argparse.ArgumentParser(description="Gas-fee competition equilibrium toolkit")
    parser.add_argument('--log-level', help="DEBUG, INFO, WARNING or ERROR "
                                            "(default: $GAS_GAME_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('solve', help="solve the equilibrium for a market config")
    p.add_argument('--config', required=True, help="market config JSON")
    p.add_argument('--out', required=True, help="output directory")
    p.add_argument('--ddf-points', type=int, default=statics.DDF_POINTS)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser('verify', help="verify a solution.json")
    p.add_argument('--solution', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--gas-grid', type=int, default=200)
    p.add_argument('--amount-grid', type=int, default=200)
    p.add_argument('--mc-samples', type=int, default=100_000)
    p.add_argument('--oracle-gas-levels', type=int, default=21)
    p.add_argument('--oracle-amount-levels', type=int, default=11)
    p.add_argument('--oracle-iterations', type=int, default=20_000,
                   help="fictitious-play rounds; 0 skips the oracle")
    p.add_argument('--config', help="optional JSON with a 'verify' thresholds section")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('sweep', help="comparative statics along one parameter")
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--vary', required=True, choices=[v.value for v in statics.Varying])
    p.add_argument('--grid', required=True, help="'a,b,c' or 'start:stop:step'")
    p.add_argument('--ddf-points', type=int, default=statics.DDF_POINTS)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser('figures', help="figure data across an O grid")
    p.add_argument('--o-grid', default='1.1:3.0:0.1')
    p.add_argument('--config', help="market template (default: reference calibration)")
    p.add_argument('--out', required=True)
    p.add_argument('--statics-checks', action='store_true',
                   help="also run every comparative-statics check")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser('analyze', help="empirical pipeline over fixtures")
    p.add_argument('--blocks', required=True)
    p.add_argument('--swaps', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--config', help="optional JSON with a 'pipeline' section")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        logging.basicConfig(level=log_level(args.log_level),
                            format='%(asctime)s %(levelname)s %(name)s: %(message)s')
        return args.func(args)
    except (NoTradeError, UnsupportedOpportunityError, NonConvergenceError,
            BracketMissingError) as e:
        print(f"✗ Solver error: {e}")
        return EXIT_SOLVER
    except (InvalidArgumentError, BlockGapError, SingularDesignError) as e:
        print(f"✗ Invalid input: {e}")
        return EXIT_INVALID
    except GasGameError as e:
        print(f"✗ Error: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        sys.exit(130)
