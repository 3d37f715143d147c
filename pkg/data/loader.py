"""
Data loader module
Loads samples, marginal tables and run configs; writes CSV and JSON outputs
"""
import json
import os
import sys
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import get_logger
from utils.constants import *
from utils.errors import EmptyData, MalformedInput
from utils.helpers import to_jsonable

logger = get_logger(__name__)

# Column mapping from common spellings to canonical names
COLUMN_MAP = {
    'y': Y, 'outcome': Y,
    'x': X, 'covariate': X,
    'z': Z, 'instrument': Z,
    'xstar': XSTAR, 'x_star': XSTAR,
    'varkappa': VARKAPPA, 'kappa': VARKAPPA,
    'cdf': CDF, 'f': CDF,
}


def _read_raw(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise MalformedInput(f"File not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyData(f"File is empty: {path}")
    except pd.errors.ParserError as exc:
        raise MalformedInput(f"Cannot parse {path}: {exc}")

    df.columns = [str(c).strip().lower() for c in df.columns]
    df = df.rename(columns={c: COLUMN_MAP.get(c, c) for c in df.columns})
    if df.empty:
        raise EmptyData(f"No data rows in {path}")
    return df


def _parse_numeric(df: pd.DataFrame, column: str) -> np.ndarray:
    """Convert a text column to float; the first bad cell is reported with its file row."""
    raw = df[column].str.strip()
    values = pd.to_numeric(raw, errors='coerce')
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float))
    if bad.any():
        pos = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: header line and 1-based numbering
        raise MalformedInput(f"Non-numeric value {raw.iloc[pos]!r}", row=pos + 2, column=column)
    return values.to_numpy(dtype=float)


def load_sample_csv(path: str) -> pd.DataFrame:
    """
    Load an observed sample

    Args:
        path: CSV with header columns y, x, z (extra columns are kept)

    Returns:
        DataFrame with float y, x (and xstar/varkappa when present) and string z
    """
    df = _read_raw(path)

    for col in SAMPLE_COLUMNS:
        if col not in df.columns:
            raise MalformedInput(f"Missing required column; available columns: {list(df.columns)}",
                                 column=col)

    out = pd.DataFrame({
        Y: _parse_numeric(df, Y),
        X: _parse_numeric(df, X),
        Z: df[Z].str.strip().to_numpy(),
    })
    empty_z = np.flatnonzero(out[Z].to_numpy() == '')
    if empty_z.size:
        raise MalformedInput("Empty instrument label", row=int(empty_z[0]) + 2, column=Z)

    for col in (XSTAR, VARKAPPA):
        if col in df.columns:
            out[col] = _parse_numeric(df, col)

    logger.info("Loaded %d rows from %s", len(out), path)
    return out


def load_marginal_csv(path: str) -> pd.DataFrame:
    """
    Load an external marginal CDF table

    Args:
        path: Two-column CSV (varkappa, cdf)

    Returns:
        DataFrame with float varkappa and cdf columns, in file order
    """
    df = _read_raw(path)
    for col in (VARKAPPA, CDF):
        if col not in df.columns:
            raise MalformedInput(f"Missing required column; available columns: {list(df.columns)}",
                                 column=col)
    return pd.DataFrame({VARKAPPA: _parse_numeric(df, VARKAPPA), CDF: _parse_numeric(df, CDF)})


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """
    Load a JSON run config (an absent path means an empty config)

    Raises:
        MalformedInput: unreadable or invalid JSON, with line and column
    """
    if path is None:
        return {}
    if not os.path.exists(path):
        raise MalformedInput(f"Config file not found: {path}")
    with open(path, 'r', encoding='utf-8') as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"Invalid JSON in {path}: {exc.msg}", row=exc.lineno, column=str(exc.colno))


def write_csv(df: pd.DataFrame, path: str):
    """Write a table with a header row and the fixed numeric format."""
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def write_json(obj: Any, path: str):
    """Write a JSON document with sorted keys; NaN becomes null."""
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write('\n')
