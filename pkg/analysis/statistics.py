"""
Statistical testing module
Log-log rate fits, replication summaries and agreement tests for simulation studies
"""
import os
import sys
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import AGREEMENT_SDS, MIN_SLOPE_POINTS, SIGNIFICANCE_LEVEL
from utils.constants import *


def fit_loglog_slope(axis: Sequence[float], errors: Sequence[float],
                     min_points: int = MIN_SLOPE_POINTS,
                     floor: Optional[float] = None) -> Dict:
    """
    Least-squares slope of log(error) on log(axis)

    Non-finite or nonpositive errors are dropped. When floor is given and the
    error at the smallest axis value is below it, that point is dropped too
    (the error there is dominated by numerical noise).

    Args:
        axis: tau or n values
        errors: Error magnitudes
        min_points: Fewer usable points returns a NaN slope
        floor: Optional error floor for the smallest axis value

    Returns:
        Dictionary with slope, intercept, ssr, n_points, dropped axis values, warning
    """
    a = np.asarray(axis, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    order = np.argsort(a)
    a, e = a[order], e[order]

    usable = np.isfinite(e) & (e > 0) & (a > 0)
    if floor is not None and usable.any():
        first = int(np.flatnonzero(usable)[0])
        if first == 0 and e[0] < floor:
            usable[0] = False

    dropped = a[~usable].tolist()
    n_points = int(usable.sum())

    if n_points < min_points:
        return {
            SLOPE: np.nan,
            INTERCEPT: np.nan,
            SSR: np.nan,
            'n_points': n_points,
            'dropped': dropped,
            'warning': f'Too few usable points for a slope ({n_points} < {min_points})'
        }

    log_a = np.log(a[usable])
    log_e = np.log(e[usable])
    model = sm.OLS(log_e, sm.add_constant(log_a)).fit()

    return {
        SLOPE: float(model.params[1]),
        INTERCEPT: float(model.params[0]),
        SSR: float(model.ssr),
        'n_points': n_points,
        'dropped': dropped,
        'warning': f'Dropped axis values {dropped}' if dropped else None
    }


def summarize_replications(estimates: np.ndarray, truth: np.ndarray) -> pd.DataFrame:
    """
    Bias, spread and RMSE per column of a replications x points array

    NaN entries are masked replications. The standard deviation uses ddof=0 so
    that rmse^2 = bias^2 + sd^2 holds exactly.

    Args:
        estimates: Array of shape (reps, points), NaN where masked
        truth: True values, one per point

    Returns:
        DataFrame with mean_bias, sd, rmse, masked_fraction, n_valid per point
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    valid = np.isfinite(est)
    n_valid = valid.sum(axis=0)
    err = np.where(valid, est - truth, 0.0)

    with np.errstate(invalid='ignore', divide='ignore'):
        bias = err.sum(axis=0) / n_valid
        centred = np.where(valid, err - bias, 0.0)
        var = (centred ** 2).sum(axis=0) / n_valid
        rmse = np.sqrt(bias ** 2 + var)

    return pd.DataFrame({
        MEAN_BIAS: bias,
        SD: np.sqrt(var),
        RMSE: rmse,
        MASKED_FRACTION: 1.0 - n_valid / est.shape[0],
        N_VALID: n_valid,
    })


def check_bias_agreement(errors: Sequence[float], predicted: float) -> Dict:
    """
    Compare a replicated mean error with an analytic prediction

    Args:
        errors: Per-replication errors (NaN entries ignored)
        predicted: Predicted mean error

    Returns:
        Dictionary with t-statistic, p-value, z-score against the Monte Carlo sd
        of the mean, and whether they agree within AGREEMENT_SDS
    """
    clean = np.asarray(errors, dtype=float)
    clean = clean[np.isfinite(clean)]
    n = clean.size

    if n < 2 or not np.isfinite(predicted):
        return {
            T_STAT: np.nan,
            P_VALUE: np.nan,
            'z_score': np.nan,
            'mc_sd': np.nan,
            'n': n,
            'agrees': False,
            'warning': 'Insufficient replications'
        }

    mc_sd = float(np.std(clean, ddof=1) / np.sqrt(n))
    if mc_sd == 0:
        z = 0.0 if clean.mean() == predicted else np.inf
        return {T_STAT: np.nan, P_VALUE: np.nan, 'z_score': z, 'mc_sd': 0.0, 'n': n,
                'agrees': z == 0.0, 'warning': 'Zero Monte Carlo spread'}

    t_stat, p_val = stats.ttest_1samp(clean, predicted)
    z = float((clean.mean() - predicted) / mc_sd)

    return {
        T_STAT: float(t_stat),
        P_VALUE: float(p_val),
        'z_score': z,
        'mc_sd': mc_sd,
        'n': n,
        'agrees': abs(z) <= AGREEMENT_SDS,
        'significant': p_val < SIGNIFICANCE_LEVEL,
        'warning': None
    }


def monotonic_trend(values: Sequence[float], increasing: bool = True) -> Dict:
    """
    Check a sequence for a strict monotone trend

    Args:
        values: Sequence (e.g. RMSE by sample size)
        increasing: True for increasing, False for decreasing

    Returns:
        Dictionary with is_monotonic and the Spearman correlation with the index
    """
    arr = np.asarray(values, dtype=float)
    if arr.size < 2 or not np.all(np.isfinite(arr)):
        return {
            'is_monotonic': False,
            'correlation': np.nan,
            'warning': 'Too few finite points for a trend'
        }

    diffs = np.diff(arr)
    strict = bool(np.all(diffs > 0)) if increasing else bool(np.all(diffs < 0))
    corr = stats.spearmanr(np.arange(arr.size), arr)[0] if arr.size > 2 else np.sign(diffs[0])

    return {
        'is_monotonic': strict,
        'correlation': float(corr),
        'warning': None
    }


def win_fraction(challenger: Sequence[float], incumbent: Sequence[float]) -> float:
    """
    Share of points where challenger < incumbent, over points where both are finite

    Returns NaN when no point has both values.
    """
    a = np.asarray(challenger, dtype=float)
    b = np.asarray(incumbent, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"Shapes differ: {a.shape} vs {b.shape}")
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        return np.nan
    return float(np.mean(a[both] < b[both]))


if __name__ == "__main__":
    print("Testing statistical functions...")

    taus = [0.05, 0.1, 0.2, 0.4]
    fit = fit_loglog_slope(taus, [0.3 * t ** 4 for t in taus])
    print(f"\nSlope of 0.3 tau^4: {fit[SLOPE]:.6f}")

    rng = np.random.default_rng(0)
    draws = rng.normal(0.01, 0.05, size=(200, 3))
    print(summarize_replications(draws, np.zeros(3)))
    print(check_bias_agreement(draws[:, 0], 0.01))
