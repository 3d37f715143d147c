"""
Non-classical measurement error module
Corrected CDF and quantile functions, and the regression on a transformed latent covariate
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.interpolate import PchipInterpolator
from sklearn.isotonic import IsotonicRegression

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import CDF_SLACK, DENSITY_FLOOR_FRACTION, MIN_MARGINAL_ROWS, MIN_VALID_MASS, get_logger
from utils.constants import *
from utils.errors import (
    LengthMismatch, MaskedTarget, NonMonotoneMarginal, OutOfRange, SkedasticRangeTooSmall,
    TooFewObservations,
)
from utils.helpers import contiguous_runs, interp_valid
from analysis.nonparam import DensityCurve, Grid, score_from_density
from analysis.wcme import CorrectedCurve, SkedasticFit

logger = get_logger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


# ============================================
# EXTERNAL MARGINAL
# ============================================


class ExternalMarginal:
    """
    Known marginal CDF of the latent covariate kappa

    Either an analytic callable or a table of (kappa, F) rows interpolated with
    a monotone cubic. Tables must be strictly increasing in both columns.
    """

    def __init__(self, cdf_fn: ArrayFn, support: Tuple[float, float] = (-np.inf, np.inf),
                 source: str = 'analytic'):
        self._cdf_fn = cdf_fn
        self.support = support
        self.source = source

    @classmethod
    def analytic(cls, cdf_fn: ArrayFn) -> 'ExternalMarginal':
        return cls(cdf_fn)

    @classmethod
    def from_table(cls, varkappa, cdf) -> 'ExternalMarginal':
        """
        Build from a tabulated CDF

        Raises:
            TooFewObservations: fewer than MIN_MARGINAL_ROWS rows
            NonMonotoneMarginal: either column not strictly increasing, or F outside [0, 1]
        """
        k = np.asarray(varkappa, dtype=float).ravel()
        F = np.asarray(cdf, dtype=float).ravel()
        if k.size != F.size:
            raise LengthMismatch(f"Marginal table columns differ in length: {k.size} vs {F.size}")
        if k.size < MIN_MARGINAL_ROWS:
            raise TooFewObservations(f"Marginal table needs at least {MIN_MARGINAL_ROWS} rows, got {k.size}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(F))):
            raise NonMonotoneMarginal("Marginal table contains non-finite values")
        for name, col in ((VARKAPPA, k), (CDF, F)):
            bad = np.flatnonzero(np.diff(col) <= 0)
            if bad.size:
                raise NonMonotoneMarginal(
                    f"Marginal column '{name}' is not strictly increasing at row {int(bad[0]) + 2}"
                )
        if F[0] < 0 or F[-1] > 1:
            raise NonMonotoneMarginal("Marginal CDF values must lie in [0, 1]")

        spline = PchipInterpolator(k, F, extrapolate=False)
        return cls(spline, (float(k[0]), float(k[-1])), source='table')

    def cdf(self, varkappa: float) -> float:
        lo, hi = self.support
        if not lo <= varkappa <= hi:
            raise OutOfRange(f"kappa = {varkappa} lies outside the marginal table [{lo}, {hi}]")
        return float(np.asarray(self._cdf_fn(np.atleast_1d(float(varkappa))), dtype=float).ravel()[0])


# ============================================
# CORRECTED DISTRIBUTION FUNCTIONS
# ============================================


@dataclass(frozen=True, eq=False)
class DistFit:
    """
    Observed and corrected marginal distribution of the covariate on a grid

    Attributes:
        grid: Evaluation grid
        cdf_x: F_X on the grid
        f, f1: Marginal density of X and its derivative
        s: Marginal score of X (NaN below the density floor)
        cdf_corr: Corrected CDF of X*, clamped to [0, 1]
        v, v1: Skedastic function and derivative (NaN where masked)
        fallback: Grid points where the skedastic fit is masked (zero correction)
        node_levels: F_X levels of the quantile nodes
        node_raw: Corrected quantile values at the nodes before projection
        node_iso: Isotonic projection of node_raw
        violation: Largest change made by the projection
    """

    grid: Grid
    cdf_x: np.ndarray
    f: np.ndarray
    f1: np.ndarray
    s: np.ndarray
    s_mask: np.ndarray
    cdf_corr: np.ndarray
    v: np.ndarray
    v1: np.ndarray
    fallback: np.ndarray
    node_levels: np.ndarray
    node_raw: np.ndarray
    node_iso: np.ndarray
    violation: float
    quantile_x_fn: ArrayFn
    score_fn: Optional[ArrayFn] = None

    def quantile_x(self, level) -> np.ndarray:
        levels = np.atleast_1d(np.asarray(level, dtype=float))
        self._check_levels(levels)
        return np.asarray(self.quantile_x_fn(levels), dtype=float)

    def cdf_corr_at(self, x: float) -> float:
        return float(np.interp(x, self.grid.points, self.cdf_corr))

    def quantile_corr(self, level) -> np.ndarray:
        """Corrected quantile function Q_corr, nondecreasing in the level."""
        levels = np.atleast_1d(np.asarray(level, dtype=float))
        x0 = self.quantile_x(levels)
        out = np.empty_like(x0)

        projected = self._projected_ranges()
        for i, (lev, x) in enumerate(zip(levels, x0)):
            if any(lo <= lev <= hi for lo, hi in projected):
                out[i] = np.interp(lev, self.node_levels, self.node_iso)
            else:
                out[i] = x + self._shift(x)
        return out

    def _shift(self, x: float) -> float:
        pts = self.grid.points
        v = interp_valid(x, pts, self.v, ~self.fallback)
        v1 = interp_valid(x, pts, self.v1, ~self.fallback)
        if self.score_fn is not None:
            s = float(np.asarray(self.score_fn(np.atleast_1d(x))).ravel()[0])
        else:
            s = interp_valid(x, pts, self.s, self.s_mask)
        shift = 0.5 * (s * v + v1)
        return float(shift) if np.isfinite(shift) else 0.0

    def _projected_ranges(self):
        changed = np.abs(self.node_iso - self.node_raw) > 0
        last = self.node_levels.size - 1
        return [(self.node_levels[max(a - 1, 0)], self.node_levels[min(b, last)])
                for a, b in contiguous_runs(changed)]

    def _check_levels(self, levels: np.ndarray):
        if np.any(~np.isfinite(levels)) or np.any(levels <= 0) or np.any(levels >= 1):
            raise OutOfRange(f"Quantile levels must lie in (0, 1), got {levels}")


def dist_fit(f_curve: DensityCurve, sk: SkedasticFit, grid: Optional[Grid] = None,
             cdf_at_start: float = 0.0, cdf_fn: Optional[ArrayFn] = None,
             quantile_fn: Optional[ArrayFn] = None, score_fn: Optional[ArrayFn] = None,
             floor_fraction: float = DENSITY_FLOOR_FRACTION) -> DistFit:
    """
    Corrected CDF and quantile function of the true covariate

    F_corr(x) = F_X(x) - (f_X'(x) v(x) + f_X(x) v'(x)) / 2
    Q_corr(s) = Q_X(s) + (s_X(Q_X(s)) v(Q_X(s)) + v'(Q_X(s))) / 2

    F_X is integrated from the density (trapezoid, starting at cdf_at_start)
    unless an exact cdf_fn is supplied; Q_X is a monotone cubic through
    (F_X, x) unless quantile_fn is supplied. Where the skedastic fit is
    masked the correction is zero. Q_corr is made nondecreasing by isotonic
    projection of its values at the grid nodes; the projection only replaces
    Q_corr over the level ranges where it changed anything.

    Args:
        f_curve: Marginal density of X with derivatives
        sk: Skedastic fit on the same grid
        grid: Optional grid check
        cdf_at_start: F_X at the first grid point (sample mode)
        cdf_fn: Exact F_X (population mode)
        quantile_fn: Exact Q_X (population mode)
        score_fn: Exact s_X (population mode)
        floor_fraction: Density floor for the marginal score

    Returns:
        DistFit

    Raises:
        SkedasticRangeTooSmall: valid skedastic points carry < 50% of the grid mass
    """
    grid = grid or f_curve.grid
    if not (grid.same_as(f_curve.grid) and grid.same_as(sk.grid)):
        raise ValueError("Density curve, skedastic fit and grid must share the grid")

    pts = grid.points
    f, f1 = f_curve.f, f_curve.f1

    total = trapezoid(f, pts)
    valid_mass = trapezoid(np.where(sk.mask, f, 0.0), pts) / total if total > 0 else 0.0
    if valid_mass < MIN_VALID_MASS:
        raise SkedasticRangeTooSmall(
            f"Skedastic fit is valid on {valid_mass:.1%} of the grid mass "
            f"(need {MIN_VALID_MASS:.0%})"
        )

    if cdf_fn is not None:
        cdf_x = np.asarray(cdf_fn(pts), dtype=float)
    else:
        cdf_x = cdf_at_start + cumulative_trapezoid(f, pts, initial=0.0)
    cdf_x = np.maximum.accumulate(np.clip(cdf_x, 0.0, 1.0))

    if quantile_fn is None:
        keep = np.concatenate([[True], np.diff(cdf_x) > 0])
        if keep.sum() < 2:
            raise ValueError("Marginal CDF is flat on the grid")
        interpolant = PchipInterpolator(cdf_x[keep], pts[keep], extrapolate=False)
        lo, hi = cdf_x[keep][0], cdf_x[keep][-1]

        def quantile_x_fn(levels):
            if np.any(levels < lo) or np.any(levels > hi):
                raise OutOfRange(f"Quantile level outside the grid's CDF range [{lo:.4g}, {hi:.4g}]")
            return interpolant(levels)
    else:
        quantile_x_fn = quantile_fn

    score = score_from_density(f_curve, floor_fraction * float(np.max(f)))
    fallback = ~sk.mask
    v0 = np.where(fallback, 0.0, sk.v)
    v10 = np.where(fallback, 0.0, sk.v1)

    cdf_raw = cdf_x - 0.5 * (f1 * v0 + f * v10)
    excursion = max(float(-cdf_raw.min()), float(cdf_raw.max() - 1.0), 0.0)
    if excursion > CDF_SLACK:
        logger.warning("dist_fit: corrected CDF leaves [0, 1] by %.3g before clamping", excursion)
    cdf_corr = np.clip(cdf_raw, 0.0, 1.0)

    if score_fn is not None:
        s_nodes = np.asarray(score_fn(pts), dtype=float)
    else:
        s_nodes = np.where(score.mask, score.s, 0.0)
    node_keep = np.concatenate([[True], np.diff(cdf_x) > 0]) & (cdf_x > 0) & (cdf_x < 1)
    node_levels = cdf_x[node_keep]
    node_raw = (pts + 0.5 * (s_nodes * v0 + v10))[node_keep]
    node_iso = IsotonicRegression(increasing=True).fit_transform(node_levels, node_raw)
    violation = float(np.max(np.abs(node_iso - node_raw))) if node_raw.size else 0.0

    if violation > 0:
        logger.info("dist_fit: isotonic projection moved corrected quantiles by up to %.3g", violation)
    n_fallback = int(fallback.sum())
    if n_fallback:
        logger.info("dist_fit: zero quantile correction at %d of %d grid points (masked skedastic fit)",
                    n_fallback, fallback.size)

    return DistFit(
        grid=grid,
        cdf_x=cdf_x,
        f=f,
        f1=f1,
        s=score.s,
        s_mask=score.mask,
        cdf_corr=cdf_corr,
        v=sk.v,
        v1=sk.v1,
        fallback=fallback,
        node_levels=node_levels,
        node_raw=node_raw,
        node_iso=node_iso,
        violation=violation,
        quantile_x_fn=quantile_x_fn,
        score_fn=score_fn,
    )


# ============================================
# COMPOSED ESTIMATOR
# ============================================


def _evaluate_at_level(level: float, dist: DistFit, corrected: CorrectedCurve) -> Tuple[float, float]:
    if not dist.grid.same_as(corrected.grid):
        raise ValueError("DistFit and CorrectedCurve must share the grid")
    target = float(dist.quantile_corr(level)[0])
    value = interp_valid(target, corrected.grid.points, corrected.rho, corrected.mask, kind='cubic')
    if not np.isfinite(value):
        raise MaskedTarget(f"Corrected regression is masked at target x = {target:.6g} (level {level:.6g})")
    return float(value), target


def locate_ncme(varkappa: float, ext: ExternalMarginal, dist: DistFit,
                corrected: CorrectedCurve) -> Tuple[float, float, float]:
    """Estimate at kappa together with its CDF level and target x."""
    level = ext.cdf(varkappa)
    if not 0.0 < level < 1.0:
        raise OutOfRange(f"F(kappa) = {level} at kappa = {varkappa}; must lie strictly inside (0, 1)")
    value, target = _evaluate_at_level(level, dist, corrected)
    return value, level, target


def rho_ncme(varkappa: float, ext: ExternalMarginal, dist: DistFit, corrected: CorrectedCurve) -> float:
    """
    Regression of Y on the latent kappa: rho_corr(Q_corr(F_kappa(kappa)))

    Raises:
        OutOfRange: F_kappa(kappa) not strictly inside (0, 1)
        MaskedTarget: corrected curve masked at the mapped point
    """
    return locate_ncme(varkappa, ext, dist, corrected)[0]


def rho_ncme_quantile(q_level: float, dist: DistFit, corrected: CorrectedCurve) -> float:
    """Regression at the q-th quantile of the latent covariate; no marginal needed."""
    if not 0.0 < q_level < 1.0:
        raise OutOfRange(f"Quantile level must lie in (0, 1), got {q_level}")
    return _evaluate_at_level(q_level, dist, corrected)[0]
