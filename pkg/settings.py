"""
Configuration loading: the market JSON file and the numeric knobs of the
solver and of the empirical pipeline.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, fields, replace

from errors import ConfigError, InvalidArgumentError
from market_core import MarketParams, PoolState

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = 'GAS_GAME_LOG_LEVEL'

MARKET_KEYS = ('reserve_a', 'reserve_b', 'fee_rate', 'price_a', 'price_b', 'base_gas_fee')


@dataclass(frozen=True)
class SolverConfig:
    """Numeric knobs of the integral-equation march."""
    initial_step: float = 5e-5
    max_step: float = 5e-5
    step_shrink_coeff: float = 5e-4
    root_tolerance: float = 1e-12
    residual_tolerance: float = 1e-8
    max_nodes: int = 2_000_000
    max_v_increment: float = 0.05
    bracket_margin: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f.name, f"must be a positive number, got {value!r}")
        if self.residual_tolerance < self.root_tolerance:
            raise ConfigError('residual_tolerance', "must not be smaller than root_tolerance")
        if self.max_nodes < 2:
            raise ConfigError('max_nodes', "must be at least 2")

    def refined(self, factor=2.0):
        """The same config with every step size divided by factor."""
        return replace(
            self,
            initial_step=self.initial_step / factor,
            max_step=self.max_step / factor,
            step_shrink_coeff=self.step_shrink_coeff / factor,
            max_v_increment=self.max_v_increment / factor,
            max_nodes=int(self.max_nodes * factor),
        )


@dataclass(frozen=True)
class VerifyConfig:
    """Pass thresholds of the verify subcommand, relative to g-hat_H unless noted."""
    flatness_rel: float = 1e-4
    deviation_gap_rel: float = 1e-3
    monte_carlo_band: float = 3.0   # in standard errors
    oracle_regret_rel: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f.name, f"must be a positive number, got {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the arbitrage-detection pipeline."""
    fee_rate: float = 0.003
    gas_used_estimate: float = 107_176
    product_rule_tolerance: float = 0.05
    gas_token_is_asset_a: bool = True

    def __post_init__(self):
        if not (0.0 <= self.fee_rate < 1.0):
            raise ConfigError('fee_rate', f"must lie in [0, 1), got {self.fee_rate!r}")
        if not self.gas_used_estimate > 0:
            raise ConfigError('gas_used_estimate', "must be positive")
        if not self.product_rule_tolerance > 0:
            raise ConfigError('product_rule_tolerance', "must be positive")


def load_config(config_file='config.json'):
    """Load the JSON config file into a dict."""
    logger.info("Loading configuration from %s", config_file)
    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError('config', f"file not found: {config_file}")
    except json.JSONDecodeError as e:
        raise ConfigError('config', f"malformed JSON in {config_file}: {e}")
    if not isinstance(data, dict):
        raise ConfigError('config', "top level must be a JSON object")
    return data


def _number(config, key):
    if key not in config:
        raise ConfigError(key, "missing")
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(key, f"must be a finite number, got {value!r}")
    return float(value)


def market_from_config(config):
    """Build MarketParams from the market keys of a config dict."""
    values = {key: _number(config, key) for key in MARKET_KEYS}
    for key in ('reserve_a', 'reserve_b', 'price_a', 'price_b'):
        if values[key] <= 0:
            raise ConfigError(key, f"must be positive, got {values[key]}")
    if not 0.0 <= values['fee_rate'] < 1.0:
        raise ConfigError('fee_rate', f"must lie in [0, 1), got {values['fee_rate']}")
    if values['base_gas_fee'] < 0:
        raise ConfigError('base_gas_fee', f"must be non-negative, got {values['base_gas_fee']}")
    try:
        pool = PoolState(values['reserve_a'], values['reserve_b'], values['fee_rate'])
        return MarketParams(pool, values['price_a'], values['price_b'], values['base_gas_fee'])
    except InvalidArgumentError as e:
        raise ConfigError('market', str(e))


def market_to_config(market):
    pool = market.pool
    return {
        'reserve_a': pool.reserve_a,
        'reserve_b': pool.reserve_b,
        'fee_rate': pool.fee_rate,
        'price_a': market.price_a,
        'price_b': market.price_b,
        'base_gas_fee': market.base_gas_fee,
    }


def _overrides(section, cls, config):
    block = config.get(section, {})
    if not isinstance(block, dict):
        raise ConfigError(section, "must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in block:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown setting")
    return block


def solver_config_from(config=None, **overrides):
    """SolverConfig from the optional "solver" section plus explicit overrides (None is ignored)."""
    values = dict(_overrides('solver', SolverConfig, config or {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    if 'max_nodes' in values:
        values['max_nodes'] = int(values['max_nodes'])
    return SolverConfig(**values)


def pipeline_config_from(config=None, **overrides):
    values = dict(_overrides('pipeline', PipelineConfig, config or {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def verify_config_from(config=None, **overrides):
    values = dict(_overrides('verify', VerifyConfig, config or {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return VerifyConfig(**values)


def log_level(cli_value=None):
    """Log level from the CLI flag, then the environment, then INFO."""
    level = cli_value or os.getenv(LOG_LEVEL_ENV) or 'INFO'
    level = level.upper()
    if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        raise ConfigError('log_level', f"unknown level {level!r}")
    return level
