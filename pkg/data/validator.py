"""
Data validation module
Sample, marginal-table and run-config checks
"""
import os
import sys
from numbers import Integral, Real
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import MIN_DATA_POINTS, MIN_MARGINAL_ROWS, MIN_POINTS_PER_LABEL, get_logger
from utils.constants import *
from utils.errors import (
    ConfigError, DegenerateData, MalformedInput, NonMonotoneMarginal, RankFailure,
    TooFewObservations,
)

logger = get_logger(__name__)


def _new_result(subject: str) -> Dict:
    return {'subject': subject, 'passed': True, 'warnings': [], 'errors': [], 'error_types': []}


def _fail(result: Dict, message: str, error_type: type):
    result['passed'] = False
    result['errors'].append(message)
    result['error_types'].append(error_type)


def ensure_valid(result: Dict):
    """
    Raise the first recorded failure of a validation result

    Config results raise ConfigError carrying every problem; other results
    raise the exception type recorded with their first error.
    """
    if result['passed']:
        return
    first = result['error_types'][0]
    if first is ConfigError:
        raise ConfigError(result['errors'])
    raise first("; ".join(result['errors']))


# ============================================
# SAMPLE CHECKS
# ============================================
def validate_required_columns(df: pd.DataFrame, required_cols: List[str]) -> Tuple[bool, List[str]]:
    """
    Validate that required columns exist in DataFrame

    Args:
        df: DataFrame to validate
        required_cols: List of required column names

    Returns:
        Tuple of (is_valid, missing_columns)
    """
    missing_cols = [col for col in required_cols if col not in df.columns]
    return len(missing_cols) == 0, missing_cols


def validate_data_sufficiency(df: pd.DataFrame, minimum: int = MIN_DATA_POINTS) -> bool:
    """True when the sample has at least `minimum` rows."""
    if len(df) < minimum:
        logger.warning("Insufficient data: %d rows (minimum: %d)", len(df), minimum)
        return False
    return True


def validate_covariate_variation(df: pd.DataFrame, column: str = X) -> bool:
    """The covariate must take more than one value."""
    values = df[column].to_numpy(dtype=float)
    return values.size > 1 and bool(np.ptp(values) > 0)


def validate_instrument(df: pd.DataFrame, column: str = Z) -> Dict:
    """
    Instrument label counts

    Returns:
        Dictionary with labels, counts, n_labels and labels below MIN_POINTS_PER_LABEL
    """
    counts = df[column].astype(str).value_counts().sort_index()
    return {
        'labels': counts.index.tolist(),
        'counts': {str(k): int(v) for k, v in counts.items()},
        'n_labels': int(counts.size),
        'small_labels': [str(k) for k, v in counts.items() if v < MIN_POINTS_PER_LABEL],
    }


def validate_sample(df: pd.DataFrame) -> Dict:
    """
    Perform every check on an observed (y, x, z) sample

    Args:
        df: Parsed sample DataFrame

    Returns:
        Dictionary with passed, errors, warnings, error_types and instrument info
    """
    results = _new_result('sample')

    # 1. Required columns
    is_valid, missing_cols = validate_required_columns(df, SAMPLE_COLUMNS)
    if not is_valid:
        _fail(results, f"Missing required columns: {missing_cols}", MalformedInput)
        return results

    # 2. Sufficiency
    if not validate_data_sufficiency(df):
        _fail(results, f"Insufficient data points: {len(df)} (minimum: {MIN_DATA_POINTS})",
              TooFewObservations)
        return results

    # 3. Covariate variation
    if not validate_covariate_variation(df):
        _fail(results, "Covariate x is constant", DegenerateData)

    # 4. Instrument variation
    instrument = validate_instrument(df)
    results['instrument'] = instrument
    if instrument['n_labels'] < 2:
        _fail(results, "Instrument relevance requires at least two distinct values of z; "
                       f"found {instrument['labels']}", RankFailure)
    if instrument['small_labels']:
        results['warnings'].append(
            f"Labels with fewer than {MIN_POINTS_PER_LABEL} rows: {instrument['small_labels']}")

    for warning in results['warnings']:
        logger.warning("validate_sample: %s", warning)
    return results


# ============================================
# MARGINAL TABLE CHECKS
# ============================================
def validate_marginal(df: pd.DataFrame) -> Dict:
    """
    Check an external (varkappa, cdf) table

    Returns:
        Validation result; failures carry TooFewObservations or NonMonotoneMarginal
    """
    results = _new_result('marginal')

    is_valid, missing_cols = validate_required_columns(df, [VARKAPPA, CDF])
    if not is_valid:
        _fail(results, f"Missing required columns: {missing_cols}", MalformedInput)
        return results

    if len(df) < MIN_MARGINAL_ROWS:
        _fail(results, f"Marginal table needs at least {MIN_MARGINAL_ROWS} rows, got {len(df)}",
              TooFewObservations)
        return results

    for col in (VARKAPPA, CDF):
        steps = np.diff(df[col].to_numpy(dtype=float))
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            _fail(results, f"Column '{col}' is not strictly increasing at row {int(bad[0]) + 3}",
                  NonMonotoneMarginal)

    cdf = df[CDF].to_numpy(dtype=float)
    if cdf.min() < 0 or cdf.max() > 1:
        _fail(results, "cdf values must lie in [0, 1]", NonMonotoneMarginal)

    return results


# ============================================
# RUN CONFIG SCHEMA
# ============================================
Checker = Callable[[Any], Optional[str]]


def _number(lo: float = -np.inf, hi: float = np.inf, open_lo: bool = False,
            allow_none: bool = False) -> Checker:
    def check(value):
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, Real) or not np.isfinite(value):
            return f"expected a finite number, got {value!r}"
        if value < lo or value > hi or (open_lo and value == lo):
            bracket = '(' if open_lo else '['
            return f"must lie in {bracket}{lo}, {hi}], got {value}"
        return None
    return check


def _integer(lo: int = 1, hi: Optional[int] = None) -> Checker:
    def check(value):
        if isinstance(value, bool) or not isinstance(value, Integral):
            return f"expected an integer, got {value!r}"
        if value < lo or (hi is not None and value > hi):
            return f"must lie in [{lo}, {hi if hi is not None else 'inf'}], got {value}"
        return None
    return check


def _choice(*options) -> Checker:
    def check(value):
        return None if value in options else f"must be one of {list(options)}, got {value!r}"
    return check


def _pair(inner: Checker, increasing: bool = True, allow_none: bool = False) -> Checker:
    def check(value):
        if value is None and allow_none:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            return f"expected a list of two values, got {value!r}"
        for item in value:
            problem = inner(item)
            if problem:
                return problem
        if increasing and not value[0] < value[1]:
            return f"must be increasing, got {list(value)}"
        return None
    return check


def _labels_pair(value) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        return f"expected two instrument labels, got {value!r}"
    if str(value[0]) == str(value[1]):
        return "labels must differ"
    return None


def _number_list(min_len: int = 1, positive: bool = False, integer: bool = False) -> Checker:
    item = _integer(1) if integer else _number(0.0 if positive else -np.inf, open_lo=positive)

    def check(value):
        if not isinstance(value, (list, tuple)) or len(value) < min_len:
            return f"expected a list of at least {min_len} numbers, got {value!r}"
        for v in value:
            problem = item(v)
            if problem:
                return problem
        return None
    return check


def _spec_ref(value) -> Optional[str]:
    if isinstance(value, str):
        from config.dgp_catalog import SPEC_CATALOG
        return None if value.lower() in SPEC_CATALOG else f"unknown catalog spec {value!r}"
    if isinstance(value, dict):
        return None
    return f"expected a catalog id or a spec document, got {value!r}"


def _mapping(schema: Dict[str, Checker]) -> Checker:
    def check(value):
        if not isinstance(value, dict):
            return f"expected an object, got {value!r}"
        problems = _check_schema(value, schema)
        return "; ".join(problems) if problems else None
    return check


def _any_dict(value) -> Optional[str]:
    return None if isinstance(value, dict) else f"expected an object, got {value!r}"


ESTIMATOR_SCHEMA: Dict[str, Checker] = {
    'kernel': _choice('gaussian', 'epanechnikov-smoothed'),
    'bandwidth_method': _choice('rule_of_thumb', 'least_squares_cv'),
    'density_bandwidth': _number(0.0, open_lo=True, allow_none=True),
    'regression_bandwidth': _number(0.0, open_lo=True, allow_none=True),
    'degree': _choice(2, 3),
    'derivative_inflation': _number(0.0, open_lo=True),
    'skedastic_bandwidth_factor': _number(0.0, open_lo=True),
    'rank_threshold': _number(0.0, open_lo=True),
    'density_floor': _number(0.0, 1.0, open_lo=True),
    'z_pair': _labels_pair,
    'anchor_x': _number(allow_none=True),
    'grid_quantiles': _pair(_number(0.0, 1.0)),
    'grid_range': _pair(_number(), allow_none=True),
    'grid_size': _integer(3),
}

QUADRATURE_SCHEMA: Dict[str, Checker] = {
    'rule': _choice('gauss_hermite', 'adaptive', 'adaptive_simpson'),
    'nodes': _integer(2),
    'abs_tol': _number(0.0, 1e-8, open_lo=True),
}

SPEC_KEYS: Dict[str, Checker] = {
    'spec': _spec_ref,
    'overrides': _any_dict,
}

CONFIG_SCHEMAS: Dict[str, Dict[str, Checker]] = {
    'fit': dict(ESTIMATOR_SCHEMA),
    'ncme-fit': dict(ESTIMATOR_SCHEMA, varkappa=_number_list()),
    'simulate': dict(SPEC_KEYS),
    'sweep': dict(
        SPEC_KEYS,
        mode=_choice('population', 'mc'),
        taus=_number_list(positive=True),
        ns=_number_list(integer=True),
        n=_integer(1),
        reps=_integer(2),
        eval_points=_number_list(),
        tau_rule=_mapping({'multiplier': _number(0.0), 'exponent': _number()}),
        quadrature=_mapping(QUADRATURE_SCHEMA),
        estimator=_mapping(ESTIMATOR_SCHEMA),
    ),
}


def _check_schema(config: Dict[str, Any], schema: Dict[str, Checker]) -> List[str]:
    problems = []
    for key in sorted(config):
        if key not in schema:
            problems.append(f"unknown key '{key}'")
            continue
        problem = schema[key](config[key])
        if problem:
            problems.append(f"'{key}': {problem}")
    return problems


def validate_config(config: Any, command: str) -> Dict:
    """
    Validate a RunConfig document against the schema of a command

    Unknown keys are rejected; every problem is reported, not just the first.

    Args:
        config: Parsed JSON document
        command: CLI subcommand name

    Returns:
        Validation result whose error type is ConfigError
    """
    results = _new_result(f'config:{command}')
    if command not in CONFIG_SCHEMAS:
        _fail(results, f"no config schema for command '{command}'", ConfigError)
        return results
    if not isinstance(config, dict):
        _fail(results, "config must be a JSON object", ConfigError)
        return results

    for problem in _check_schema(config, CONFIG_SCHEMAS[command]):
        _fail(results, problem, ConfigError)
    return results
