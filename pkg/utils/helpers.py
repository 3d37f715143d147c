"""
Helper functions used across multiple modules
"""
import hashlib
import json
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Build a counter-based generator keyed by (seed, *stream)

    Streams for different keys are independent, so replications can be
    drawn in any order or in parallel.

    Args:
        seed: Base seed
        stream: Extra integer keys (replication index, sweep cell, ...)

    Returns:
        numpy Generator backed by Philox
    """
    key = [int(seed)] + [int(s) for s in stream]
    if any(k < 0 for k in key):
        raise ValueError(f"Seeds and stream keys must be nonnegative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def contiguous_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """
    Find runs of True values

    Args:
        mask: Boolean array

    Returns:
        List of (start, stop) index pairs, stop exclusive
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def interp_valid(x_new: float, grid: np.ndarray, values: np.ndarray,
                 mask: np.ndarray, kind: str = 'linear') -> float:
    """
    Interpolate a masked grid function at a single point

    The point must fall inside a run of valid grid points; otherwise NaN is
    returned. Cubic interpolation uses a spline over that run only.

    Args:
        x_new: Evaluation point
        grid: Grid abscissae (strictly increasing)
        values: Function values on the grid
        mask: Validity flags
        kind: 'linear' or 'cubic'

    Returns:
        Interpolated value, or NaN if the bracketing points are masked
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)

    if not np.isfinite(x_new) or x_new < grid[0] or x_new > grid[-1]:
        return np.nan

    for start, stop in contiguous_runs(mask):
        lo, hi = grid[start], grid[stop - 1]
        if lo <= x_new <= hi:
            if stop - start == 1:
                return float(values[start])
            seg_x = grid[start:stop]
            seg_y = values[start:stop]
            if kind == 'cubic' and stop - start >= 4:
                return float(CubicSpline(seg_x, seg_y)(x_new))
            return float(np.interp(x_new, seg_x, seg_y))

    return np.nan


def is_geometric(values: Sequence[float], rtol: float = 0.01) -> bool:
    """Check that consecutive ratios of a positive sequence agree within rtol."""
    arr = np.asarray(values, dtype=float)
    if np.any(arr <= 0):
        return False
    if arr.size < 3:
        return True
    ratios = arr[1:] / arr[:-1]
    return bool(np.all(np.abs(ratios / ratios[0] - 1.0) <= rtol))


def config_hash(config: Dict[str, Any]) -> str:
    """
    SHA-256 of the canonical JSON form of a config

    Args:
        config: JSON-serialisable dictionary

    Returns:
        Hex digest
    """
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=_json_default)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and NaN into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if np.isfinite(value) else None
    return obj


def format_number(value: float, digits: int = 4) -> str:
    """
    Format a number for console summaries

    Args:
        value: Number to format
        digits: Significant digits

    Returns:
        Formatted string ('N/A' for NaN)
    """
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "N/A"
    return f"{value:.{digits}g}"
