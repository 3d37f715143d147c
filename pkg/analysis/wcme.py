"""
Weakly classical measurement error module
Skedastic-function recovery, bias-corrected regression and rank diagnostics
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import DENSITY_FLOOR_FRACTION, RANK_THRESHOLD, get_logger
from utils.constants import *
from utils.errors import AnchorMasked, LabelNotFound, NoValidPoints, OutOfRange
from analysis.nonparam import DensityCurve, Grid, RegCurve, ScoreCurve

logger = get_logger(__name__)


# ============================================
# DATA STRUCTURES
# ============================================


@dataclass(frozen=True, eq=False)
class CurveBundle:
    """Regression, density and score curves for one instrument value (or pooled)."""

    q: RegCurve
    f: DensityCurve
    s: ScoreCurve


@dataclass(frozen=True, eq=False)
class CurveSet:
    """
    Every fitted or population function needed by the corrections, on one grid

    Attributes:
        grid: Shared evaluation grid
        per_z: Instrument label -> CurveBundle
        pooled: CurveBundle ignoring the instrument
        z_pair: Ordered labels (z1, z2) used for differencing
    """

    grid: Grid
    per_z: Dict[str, CurveBundle]
    pooled: CurveBundle
    z_pair: Tuple[str, str]

    def __post_init__(self):
        z1, z2 = self.z_pair
        for label in (z1, z2):
            if label not in self.per_z:
                raise LabelNotFound(f"z_pair label {label!r} not among {sorted(self.per_z)}")
        if z1 == z2:
            raise ValueError("z_pair needs two distinct labels")
        bundles = list(self.per_z.values()) + [self.pooled]
        for bundle in bundles:
            for curve in (bundle.q, bundle.f, bundle.s):
                if not curve.grid.same_as(self.grid):
                    raise ValueError("All curves in a CurveSet must share the grid")

    @property
    def labels(self):
        return list(self.per_z)

    def with_z_pair(self, z1: str, z2: str) -> 'CurveSet':
        return replace(self, z_pair=(z1, z2))

    def bundle(self, z: str) -> CurveBundle:
        """Curves for one instrument label; POOLED selects the instrument-free bundle."""
        if z == POOLED and POOLED not in self.per_z:
            return self.pooled
        if z not in self.per_z:
            raise LabelNotFound(f"Instrument label {z!r} not among {sorted(self.per_z)}")
        return self.per_z[z]


@dataclass(frozen=True, eq=False)
class SkedasticFit:
    """Recovered skedastic function, its derivative and the rank mask."""

    grid: Grid
    v: np.ndarray
    v1: np.ndarray
    denom: np.ndarray
    mask: np.ndarray
    reason: np.ndarray = None

    def __post_init__(self):
        if self.reason is None:
            reason = np.where(self.mask, REASON_OK, REASON_RANK).astype(object)
            object.__setattr__(self, 'reason', reason)

    @classmethod
    def from_known(cls, grid: Grid, v: np.ndarray, v1: np.ndarray) -> 'SkedasticFit':
        """Wrap a known skedastic function (no instrument, no rank condition)."""
        v = np.asarray(v, dtype=float)
        v1 = np.asarray(v1, dtype=float)
        mask = np.isfinite(v) & np.isfinite(v1)
        return cls(grid, np.where(mask, v, np.nan), np.where(mask, v1, np.nan),
                   np.full(len(grid), np.nan), mask)

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class CorrectedCurve:
    """Corrected regression values next to the naive ones."""

    grid: Grid
    rho: np.ndarray
    naive: np.ndarray
    mask: np.ndarray
    reason: np.ndarray = None
    label: str = POOLED
    anchor: Optional[float] = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.rho)
        object.__setattr__(self, 'mask', mask)
        object.__setattr__(self, 'rho', np.where(mask, self.rho, np.nan))
        if self.reason is None:
            object.__setattr__(self, 'reason', np.where(mask, REASON_OK, REASON_UPSTREAM).astype(object))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            GRID_X: self.grid.points,
            'rho': self.rho,
            'naive': self.naive,
            'valid': self.mask,
            MASK_REASON: self.reason,
        })


# ============================================
# RANK CONDITION
# ============================================


def _rank_arrays(curves: CurveSet, threshold: float,
                 floor_fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    """Raw denominator q'(x)[s(x|z1) - s(x|z2)] and a reason code per grid point."""
    z1, z2 = curves.z_pair
    b1, b2 = curves.per_z[z1], curves.per_z[z2]
    pooled_q = curves.pooled.q

    with np.errstate(invalid='ignore'):
        denom = pooled_q.g1 * (b1.s.s - b2.s.s)

    dens_ok = np.ones(len(curves.grid), dtype=bool)
    for bundle in (b1, b2):
        dens_ok &= bundle.f.f >= floor_fraction * np.max(bundle.f.f)

    fit_ok = pooled_q.mask & b1.q.mask & b2.q.mask
    score_ok = b1.s.mask & b2.s.mask

    reason = np.full(len(curves.grid), REASON_OK, dtype=object)
    with np.errstate(invalid='ignore'):
        reason[np.abs(denom) < threshold] = REASON_RANK
    reason[~np.isfinite(denom)] = REASON_NONFINITE
    reason[~score_ok] = REASON_UPSTREAM
    reason[~fit_ok] = REASON_DEGENERATE
    reason[~dens_ok] = REASON_DENSITY_FLOOR
    return denom, reason


def rank_diagnostic(curves: CurveSet, threshold: float = RANK_THRESHOLD,
                    floor_fraction: float = DENSITY_FLOOR_FRACTION) -> pd.DataFrame:
    """
    Per-grid-point check of the identification (rank) condition

    Args:
        curves: CurveSet
        threshold: Minimum |q'(x) * (s(x|z1) - s(x|z2))|
        floor_fraction: Per-z density floor as a fraction of its maximum

    Returns:
        DataFrame with columns x, denom, rank_pass, mask_reason
    """
    denom, reason = _rank_arrays(curves, threshold, floor_fraction)
    return pd.DataFrame({
        GRID_X: curves.grid.points,
        DENOM: denom,
        RANK_PASS: reason == REASON_OK,
        MASK_REASON: reason,
    })


# ============================================
# SKEDASTIC FUNCTION
# ============================================


def v_tilde(curves: CurveSet, rank_threshold: float = RANK_THRESHOLD,
            floor_fraction: float = DENSITY_FLOOR_FRACTION) -> SkedasticFit:
    """
    Recover the skedastic function v and its derivative from two instrument values

    v(x)  = [q(x,z1) - q(x,z2)] / D(x),   D(x) = q'(x)[s(x|z1) - s(x|z2)]
    v'(x) = [q'(x,z1) - q'(x,z2)] / D(x) - v(x) D'(x) / D(x)
    with D'(x) = q''(x) ds(x) + q'(x) ds'(x).

    Args:
        curves: CurveSet with z_pair set
        rank_threshold: Minimum |D(x)|
        floor_fraction: Per-z density floor as a fraction of its maximum

    Returns:
        SkedasticFit; points failing the rank condition are masked
    """
    z1, z2 = curves.z_pair
    b1, b2 = curves.per_z[z1], curves.per_z[z2]
    pooled_q = curves.pooled.q

    denom, reason = _rank_arrays(curves, rank_threshold, floor_fraction)
    valid = reason == REASON_OK

    with np.errstate(divide='ignore', invalid='ignore'):
        v = (b1.q.g - b2.q.g) / denom
        ds = b1.s.s - b2.s.s
        ds1 = b1.s.s1 - b2.s.s1
        grad_denom = pooled_q.g2 * ds + pooled_q.g1 * ds1
        v1 = (b1.q.g1 - b2.q.g1) / denom - v * grad_denom / denom

    bad = valid & ~(np.isfinite(v) & np.isfinite(v1))
    reason[bad] = REASON_NONFINITE
    valid &= ~bad

    if not valid.any():
        raise NoValidPoints(
            f"Rank condition fails at every grid point for z_pair {curves.z_pair} "
            f"(threshold {rank_threshold:g})"
        )

    n_masked = int((~valid).sum())
    if n_masked:
        counts = pd.Series(reason[~valid]).value_counts().to_dict()
        logger.info("v_tilde: %d of %d grid points masked %s", n_masked, valid.size, counts)

    return SkedasticFit(curves.grid, np.where(valid, v, np.nan), np.where(valid, v1, np.nan),
                        denom, valid, reason)


# ============================================
# CORRECTED REGRESSION
# ============================================


def _check_grid(curves: CurveSet, sk: SkedasticFit):
    if not sk.grid.same_as(curves.grid):
        raise ValueError("SkedasticFit and CurveSet must share the grid")


def rho_tilde(curves: CurveSet, sk: SkedasticFit, z: Optional[str] = None) -> CorrectedCurve:
    """
    Bias-corrected regression at instrument value z

    rho(x,z) = q(x,z) - v(x)[q'(x) s(x|z) + q''(x)/2] - q'(x) v'(x)

    With z = POOLED the pooled q and marginal score s_X take the place of
    q(., z) and s(.|z). That is the P(z|x)-weighted average of the per-label
    curves, since sum_z P(z|x) s(x|z) = s_X(x).

    Args:
        curves: CurveSet
        sk: SkedasticFit on the same grid
        z: Instrument label or POOLED (default: first of z_pair)

    Returns:
        CorrectedCurve with the naive q(., z) alongside
    """
    _check_grid(curves, sk)
    z = curves.z_pair[0] if z is None else z
    bundle = curves.bundle(z)
    pooled_q = curves.pooled.q

    with np.errstate(invalid='ignore'):
        rho = (bundle.q.g
               - sk.v * (pooled_q.g1 * bundle.s.s + 0.5 * pooled_q.g2)
               - pooled_q.g1 * sk.v1)

    reason = sk.reason.copy()
    curve_ok = bundle.q.mask & bundle.s.mask & pooled_q.mask
    reason[sk.mask & ~curve_ok] = REASON_UPSTREAM
    mask = sk.mask & curve_ok
    reason[mask & ~np.isfinite(rho)] = REASON_NONFINITE

    return CorrectedCurve(curves.grid, rho, bundle.q.g.copy(), mask, reason, label=z)


def default_anchor(sk: SkedasticFit) -> float:
    """Best-conditioned valid grid point: the one with the largest |denominator|."""
    if not sk.mask.any():
        raise NoValidPoints("No valid grid point to anchor the skedastic constant")
    scores = np.where(sk.mask, np.abs(sk.denom), -np.inf)
    return float(sk.grid.points[int(np.argmax(scores))])


def _anchor_value(sk: SkedasticFit, anchor_x: float) -> float:
    pts = sk.grid.points
    if not pts[0] <= anchor_x <= pts[-1]:
        raise OutOfRange(f"Anchor {anchor_x} lies outside the grid [{pts[0]}, {pts[-1]}]")

    idx = sk.grid.index_of(anchor_x)
    if idx is not None:
        if not sk.mask[idx]:
            raise AnchorMasked(f"Rank condition fails at anchor x = {anchor_x} ({sk.reason[idx]})")
        return float(sk.v[idx])

    hi = int(np.searchsorted(pts, anchor_x))
    lo = hi - 1
    if not (sk.mask[lo] and sk.mask[hi]):
        raise AnchorMasked(f"Rank condition fails next to anchor x = {anchor_x}")
    weight = (anchor_x - pts[lo]) / (pts[hi] - pts[lo])
    return float((1.0 - weight) * sk.v[lo] + weight * sk.v[hi])


def rho_tilde_cme(curves: CurveSet, sk: SkedasticFit, anchor_x: Optional[float] = None,
                  z: Optional[str] = None) -> CorrectedCurve:
    """
    Correction under classical (homoskedastic) error using v at a single anchor

    rho(x,z) = q(x,z) - v(anchor)[q'(x) s(x|z) + q''(x)/2]
    z = POOLED uses the pooled q and s_X.

    Valid wherever the curves are valid, even where the rank condition fails.
    """
    _check_grid(curves, sk)
    z = curves.z_pair[0] if z is None else z
    bundle = curves.bundle(z)
    pooled_q = curves.pooled.q

    if anchor_x is None:
        anchor_x = default_anchor(sk)
    v_anchor = _anchor_value(sk, anchor_x)

    with np.errstate(invalid='ignore'):
        rho = bundle.q.g - v_anchor * (pooled_q.g1 * bundle.s.s + 0.5 * pooled_q.g2)

    mask = bundle.q.mask & bundle.s.mask & pooled_q.mask
    reason = np.where(mask, REASON_OK, REASON_UPSTREAM).astype(object)
    return CorrectedCurve(curves.grid, rho, bundle.q.g.copy(), mask, reason, label=z,
                          anchor=float(anchor_x))


def rho_tilde_known_v(q_curve: RegCurve, s_curve: ScoreCurve,
                      v_fn: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]) -> CorrectedCurve:
    """
    Correction with a known skedastic function, no instrument needed

    rho(x) = q(x) - v(x)[q'(x) s_X(x) + q''(x)/2] - q'(x) v'(x)

    Args:
        q_curve: Pooled regression curve
        s_curve: Marginal score curve on the same grid
        v_fn: Callable returning (v, v') on an array of points

    Returns:
        CorrectedCurve
    """
    if not q_curve.grid.same_as(s_curve.grid):
        raise ValueError("Regression and score curves must share the grid")

    v, v1 = v_fn(q_curve.grid.points)
    v = np.broadcast_to(np.asarray(v, dtype=float), q_curve.g.shape)
    v1 = np.broadcast_to(np.asarray(v1, dtype=float), q_curve.g.shape)

    with np.errstate(invalid='ignore'):
        rho = q_curve.g - v * (q_curve.g1 * s_curve.s + 0.5 * q_curve.g2) - q_curve.g1 * v1

    mask = q_curve.mask & s_curve.mask & np.isfinite(v) & np.isfinite(v1)
    reason = np.where(mask, REASON_OK, REASON_UPSTREAM).astype(object)
    return CorrectedCurve(q_curve.grid, rho, q_curve.g.copy(), mask, reason, label=POOLED)
