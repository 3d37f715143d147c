"""
Estimation pipeline module
Sample -> fitted curves -> skedastic fit -> corrected regressions
"""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import (
    DENSITY_FLOOR_FRACTION, DERIVATIVE_BANDWIDTH_INFLATION, GRID_QUANTILES, GRID_SIZE,
    KERNEL_FAMILY, LOCAL_POLY_DEGREE, RANK_THRESHOLD, SKEDASTIC_BANDWIDTH_FACTOR, get_logger,
)
from utils.constants import *
from utils.errors import LabelNotFound, RankFailure, TooFewObservations
from analysis.nonparam import (
    Grid, KernelSpec, density_floor, kde, local_poly_fit, score_from_density, select_bandwidth,
)
from analysis.oracle import Sample
from analysis.wcme import (
    CorrectedCurve, CurveBundle, CurveSet, SkedasticFit, rank_diagnostic, rho_tilde,
    rho_tilde_cme, v_tilde,
)

logger = get_logger(__name__)


@dataclass(frozen=True)
class EstimatorSettings:
    """
    Tunables of the sample estimator

    Attributes:
        kernel: Kernel family
        bandwidth_method: 'rule_of_thumb' or 'least_squares_cv'
        density_bandwidth: Fixed density bandwidth (overrides the method)
        regression_bandwidth: Fixed regression bandwidth (overrides the method)
        degree: Local polynomial degree
        derivative_inflation: Bandwidth factor per derivative order of the regression fits
        skedastic_bandwidth_factor: Multiple of the regression bandwidth used by the
            per-label fits that enter the skedastic differences
        rank_threshold: Minimum |q'(x) (s(x|z1) - s(x|z2))|
        density_floor: Score floor as a fraction of the density maximum
        z_pair: Differencing pair; default is the two most frequent labels
        anchor_x: Anchor for the classical-error variant; default best-conditioned point
        grid_quantiles: Quantile range of x spanned by the default grid
        grid_range: Explicit (lo, hi) grid range, overrides grid_quantiles
        grid_size: Number of grid points
    """

    kernel: str = KERNEL_FAMILY
    bandwidth_method: str = 'rule_of_thumb'
    density_bandwidth: Optional[float] = None
    regression_bandwidth: Optional[float] = None
    degree: int = LOCAL_POLY_DEGREE
    derivative_inflation: float = DERIVATIVE_BANDWIDTH_INFLATION
    skedastic_bandwidth_factor: float = SKEDASTIC_BANDWIDTH_FACTOR
    rank_threshold: float = RANK_THRESHOLD
    density_floor: float = DENSITY_FLOOR_FRACTION
    z_pair: Optional[Tuple[str, str]] = None
    anchor_x: Optional[float] = None
    grid_quantiles: Tuple[float, float] = GRID_QUANTILES
    grid_range: Optional[Tuple[float, float]] = None
    grid_size: int = GRID_SIZE

    @classmethod
    def from_config(cls, config: Optional[Dict[str, Any]] = None) -> 'EstimatorSettings':
        """Build from a validated config dict; missing keys take the defaults."""
        config = config or {}
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in config.items() if k in known}
        for key in ('z_pair', 'grid_quantiles', 'grid_range'):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get('z_pair') is not None:
            kwargs['z_pair'] = tuple(str(z) for z in kwargs['z_pair'])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key in ('z_pair', 'grid_quantiles', 'grid_range'):
            if out[key] is not None:
                out[key] = list(out[key])
        return out


@dataclass(frozen=True, eq=False)
class Estimate:
    """Everything cmd_fit reports for one sample."""

    curves: CurveSet
    skedastic: SkedasticFit
    corrected: CorrectedCurve
    cme: CorrectedCurve
    rank: pd.DataFrame
    bandwidths: Dict[str, Dict[str, float]]

    @property
    def grid(self) -> Grid:
        return self.curves.grid

    def to_frame(self) -> pd.DataFrame:
        """Curve table in the fixed column order of curves.csv."""
        pooled = self.curves.pooled.q
        out = {
            GRID_X: self.grid.points,
            Q_POOLED: np.where(pooled.mask, pooled.g, np.nan),
            Q_POOLED_D1: np.where(pooled.mask, pooled.g1, np.nan),
            Q_POOLED_D2: np.where(pooled.mask, pooled.g2, np.nan),
        }
        for label in self.curves.labels:
            bundle = self.curves.per_z[label]
            out[f'{Q_PREFIX}{label}'] = np.where(bundle.q.mask, bundle.q.g, np.nan)
        for label in self.curves.labels:
            out[f'{S_PREFIX}{label}'] = self.curves.per_z[label].s.s
        out[RHO_HAT] = self.corrected.rho
        out[RHO_CME] = self.cme.rho
        out[V_TILDE] = self.skedastic.v
        out[V_TILDE_D1] = self.skedastic.v1
        out[DENOM] = self.skedastic.denom
        out[RANK_PASS] = self.rank[RANK_PASS].to_numpy()
        out[MASK_REASON] = self.corrected.reason
        return pd.DataFrame(out)


# ============================================
# GRID AND INSTRUMENT PAIR
# ============================================


def default_grid(x: np.ndarray, settings: EstimatorSettings,
                 extra: Optional[Sequence[float]] = None) -> Grid:
    """Equally spaced grid over settings.grid_range or the x quantile range."""
    if settings.grid_range is not None:
        grid = Grid.linspace(settings.grid_range[0], settings.grid_range[1], settings.grid_size)
    else:
        grid = Grid.from_quantiles(x, settings.grid_quantiles, settings.grid_size)
    return grid if extra is None or len(extra) == 0 else grid.with_points(extra)


def choose_z_pair(z: np.ndarray, requested: Optional[Tuple[str, str]] = None) -> Tuple[str, str]:
    """
    Pick the differencing pair

    Defaults to the two most frequent labels, ties broken by label order.

    Raises:
        RankFailure: fewer than two distinct instrument values
        LabelNotFound: a requested label does not occur in the data
    """
    labels, counts = np.unique(np.asarray(z).astype(str), return_counts=True)
    if labels.size < 2:
        raise RankFailure(
            "Instrument relevance requires at least two distinct values of z; "
            f"found only {list(labels)}"
        )
    if requested is not None:
        missing = [lab for lab in requested if lab not in labels]
        if missing:
            raise LabelNotFound(f"z_pair labels {missing} not found in data labels {list(labels)}")
        return tuple(requested)

    order = sorted(zip(-counts, labels))
    return order[0][1], order[1][1]


# ============================================
# CURVE FITTING
# ============================================


def _fit_bundle(x: np.ndarray, y: np.ndarray, settings: EstimatorSettings, grid: Grid,
                regression_factor: float = 1.0) -> Tuple[CurveBundle, Dict[str, float]]:
    """
    Density, score and regression curves for one subsample

    Densities use one bandwidth for f, f' and f'' so that s1 is the derivative
    of s. Regression derivatives use the inflated bandwidths.
    """
    if x.size < settings.degree + 2:
        raise TooFewObservations(f"Need at least {settings.degree + 2} observations per label, got {x.size}")

    h_density = settings.density_bandwidth or select_bandwidth(
        x, settings.bandwidth_method, 'density', settings.kernel)
    density = kde(x, KernelSpec(settings.kernel, h_density, 2), grid)
    score = score_from_density(density, density_floor(density, settings.density_floor))

    h_reg = regression_factor * (settings.regression_bandwidth or select_bandwidth(
        (x, y), settings.bandwidth_method, 'regression', settings.kernel, settings.degree))
    q = local_poly_fit(x, y, settings.degree,
                       KernelSpec(settings.kernel, h_reg, 2, settings.derivative_inflation), grid)

    return CurveBundle(q, density, score), {'density': float(h_density), 'regression': float(h_reg)}


def fit_curves_with_bandwidths(sample: Sample, settings: EstimatorSettings,
                               grid: Grid) -> Tuple[CurveSet, Dict[str, Dict[str, float]]]:
    z_pair = choose_z_pair(sample.z, settings.z_pair)
    per_z, bandwidths = {}, {}
    for label in np.unique(sample.z):
        sel = sample.z == label
        per_z[str(label)], bandwidths[str(label)] = _fit_bundle(
            sample.x[sel], sample.y[sel], settings, grid, settings.skedastic_bandwidth_factor)

    pooled, bandwidths[POOLED] = _fit_bundle(sample.x, sample.y, settings, grid)
    logger.debug("fit_curves: bandwidths %s", bandwidths)
    return CurveSet(grid, per_z, pooled, z_pair), bandwidths


def fit_curves(sample: Sample, settings: EstimatorSettings, grid: Grid) -> CurveSet:
    """
    Kernel estimates of q(., z), f_{X|Z}, scores and their pooled versions

    Args:
        sample: Observed data
        settings: Estimator settings
        grid: Evaluation grid

    Returns:
        CurveSet with z_pair chosen by choose_z_pair
    """
    return fit_curves_with_bandwidths(sample, settings, grid)[0]


def estimate(sample: Sample, settings: Optional[EstimatorSettings] = None,
             grid: Optional[Grid] = None) -> Estimate:
    """
    Full sample pipeline: fit -> v_tilde -> rho_tilde -> classical-error variant

    Both corrected curves are reported on the pooled scale (z = POOLED).

    Raises:
        RankFailure: a single instrument value
        NoValidPoints: the rank condition fails at every grid point
    """
    settings = settings or EstimatorSettings()
    grid = grid or default_grid(sample.x, settings)
    curves, bandwidths = fit_curves_with_bandwidths(sample, settings, grid)

    sk = v_tilde(curves, settings.rank_threshold, settings.density_floor)
    corrected = rho_tilde(curves, sk, POOLED)
    cme = rho_tilde_cme(curves, sk, settings.anchor_x, POOLED)
    rank = rank_diagnostic(curves, settings.rank_threshold, settings.density_floor)

    logger.info("estimate: n=%d, %d/%d grid points pass the rank condition, z_pair=%s",
                sample.n, sk.n_valid, len(grid), curves.z_pair)
    return Estimate(curves, sk, corrected, cme, rank, bandwidths)


def empirical_cdf_at(x: np.ndarray, point: float) -> float:
    """Share of observations at or below point."""
    return float(np.mean(np.asarray(x, dtype=float) <= point))
