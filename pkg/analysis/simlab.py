"""
Simulation laboratory module
Monte Carlo replications and tau / n sweeps of naive versus corrected estimators
"""
from __future__ import annotations

import os
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import (
    EVAL_QUANTILES, GEOMETRIC_RTOL, MC_REPS, MC_SEED, MIN_SLOPE_POINTS, MIN_TAU_POINTS,
    NAIVE_SLOPE_WINDOW, NCME_CHECK_POINT, POPULATION_RANK_THRESHOLD, QUANTILE_CHECK_LEVEL,
    SLOPE_FLOOR_FACTOR, SLOPE_MARGIN, TAU_RULE_EXPONENT, TAU_RULE_MULTIPLIER, get_logger,
    get_thread_count,
)
from utils.constants import *
from utils.errors import AllRepsFailed, EivError, MethodError, NonGeometricTaus, OutOfRange, TooFewObservations
from utils.helpers import config_hash, is_geometric
from analysis.ncme import ExternalMarginal, dist_fit, rho_ncme
from analysis.nonparam import Grid
from analysis.oracle import (
    DgpSpec, QuadratureConfig, population_curves, population_dist, predicted_naive_bias, sample,
    true_v,
)
from analysis.pipeline import EstimatorSettings, fit_curves
from analysis.statistics import (
    check_bias_agreement, fit_loglog_slope, monotonic_trend, summarize_replications, win_fraction,
)
from analysis.wcme import CurveSet, rho_tilde, rho_tilde_cme, rho_tilde_known_v, v_tilde

logger = get_logger(__name__)


# ============================================
# CONFIGURATION AND REPORTS
# ============================================


@dataclass(frozen=True)
class TauRule:
    """tau_n = multiplier * n ** exponent."""

    multiplier: float = TAU_RULE_MULTIPLIER
    exponent: float = TAU_RULE_EXPONENT

    def __call__(self, n: int) -> float:
        return float(self.multiplier * n ** self.exponent)


@dataclass(frozen=True)
class McConfig:
    """
    One Monte Carlo experiment

    Attributes:
        spec: Data-generating process
        n: Sample size per replication
        reps: Replication count (at least 2)
        seed: Base seed; replication r draws from stream (cell, r)
        settings: Estimator settings
        eval_points: Evaluation points; default the 0.25/0.5/0.75 quantiles of X*
        cell: Sweep cell index, part of the RNG stream key
        n_jobs: Worker count; default EIV_THREADS or the machine cores
    """

    spec: DgpSpec
    n: int
    reps: int = MC_REPS
    seed: int = MC_SEED
    settings: EstimatorSettings = field(default_factory=EstimatorSettings)
    eval_points: Optional[Tuple[float, ...]] = None
    cell: int = 0
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError(f"reps must be at least 2, got {self.reps}")
        if self.n < 1:
            raise TooFewObservations(f"n must be positive, got {self.n}")
        if self.eval_points is not None:
            object.__setattr__(self, 'eval_points', tuple(float(x) for x in self.eval_points))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'spec': self.spec.to_dict(),
            'n': self.n,
            'reps': self.reps,
            'seed': self.seed,
            'settings': self.settings.to_dict(),
            'eval_points': None if self.eval_points is None else list(self.eval_points),
            'cell': self.cell,
        }


@dataclass(frozen=True, eq=False)
class McReport:
    """Per eval point and estimator: bias, sd, rmse and masked fraction."""

    table: pd.DataFrame
    config: Dict[str, Any]
    config_hash: str
    wall_time: float
    eval_points: Tuple[float, ...]

    def cell(self, estimator: str, eval_x: float) -> pd.Series:
        rows = self.table[(self.table[ESTIMATOR] == estimator) & np.isclose(self.table[EVAL_X], eval_x)]
        if rows.empty:
            raise KeyError(f"No row for estimator {estimator!r} at x = {eval_x}")
        return rows.iloc[0]

    def metric(self, estimator: str, column: str) -> np.ndarray:
        rows = self.table[self.table[ESTIMATOR] == estimator].sort_values(EVAL_X)
        return rows[column].to_numpy()

    def to_csv(self, path: str):
        self.table.to_csv(path, index=False, float_format=FLOAT_FORMAT)

    def summary(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'config_hash': self.config_hash,
            'wall_time_seconds': self.wall_time,
            'eval_points': list(self.eval_points),
        }


@dataclass(frozen=True, eq=False)
class SweepReport:
    """
    Error series along a tau or n axis with fitted log-log slopes

    Attributes:
        axis: 'tau' or 'n'
        values: Axis values in input order
        mode: 'population' or 'mc'
        table: Long table (axis_value, estimator, error [, eval_x, rmse, mean_bias, tau])
        slopes: Series name -> fit_loglog_slope result, or None when omitted
        order: Approximation order p of the model
        extra: Mode-specific facts (e.g. per-n win fractions)
    """

    axis: str
    values: Tuple[float, ...]
    mode: str
    table: pd.DataFrame
    slopes: Dict[str, Optional[Dict[str, Any]]]
    order: int
    extra: Dict[str, Any] = field(default_factory=dict)

    def errors(self, series: str) -> np.ndarray:
        rows = self.table[self.table[ESTIMATOR] == series]
        if EVAL_X in rows.columns:
            rows = rows.groupby(AXIS_VALUE, sort=False)[ERROR].first().reset_index()
        return rows[ERROR].to_numpy()

    def slope(self, series: str) -> float:
        fit = self.slopes.get(series)
        return np.nan if fit is None else fit[SLOPE]

    def to_csv(self, path: str):
        self.table.to_csv(path, index=False, float_format=FLOAT_FORMAT)

    def checks(self) -> Dict[str, Dict[str, Any]]:
        """
        Pass/fail of the acceptance windows

        tau axis: corrected-type slopes >= p - margin and the naive slope inside
        its window. n axis: corrected RMSE decreasing in n and below naive RMSE
        at a majority of eval points for the largest n.
        """
        out = {}
        if self.axis == 'n':
            rmse = self.errors(CORRECTED)
            wins = self.extra.get('corrected_win_fraction', {})
            out['corrected_rmse_decreasing'] = {
                'values': rmse.tolist(), 'pass': bool(monotonic_trend(rmse, increasing=False)['is_monotonic'])}
            if wins:
                largest = max(wins)
                out['corrected_beats_naive_at_largest_n'] = {
                    'n': largest, 'win_fraction': wins[largest], 'pass': bool(wins[largest] > 0.5)}
            return out

        target = self.order - SLOPE_MARGIN
        for series in (CORRECTED, CME, KNOWN_V, V_ERROR, QUANTILE, NCME):
            slope = self.slope(series)
            if series in self.slopes and self.slopes[series] is not None:
                out[f'{series}_slope'] = {'value': slope, 'threshold': target,
                                          'pass': bool(np.isfinite(slope) and slope >= target)}
        if self.slopes.get(NAIVE) is not None:
            slope = self.slope(NAIVE)
            lo, hi = NAIVE_SLOPE_WINDOW
            out[f'{NAIVE}_slope'] = {'value': slope, 'window': [lo, hi],
                                     'pass': bool(np.isfinite(slope) and lo <= slope <= hi)}
        return out


# ============================================
# GRIDS
# ============================================


def default_eval_points(spec: DgpSpec, qc: Optional[QuadratureConfig] = None) -> Tuple[float, ...]:
    """Quartiles and median of the X* marginal."""
    dist = population_dist(spec.with_tau(0.0), qc)
    return tuple(float(v) for v in dist.quantile_xstar(list(EVAL_QUANTILES)))


def experiment_grid(spec: DgpSpec, settings: EstimatorSettings, eval_points: Sequence[float],
                    qc: Optional[QuadratureConfig] = None) -> Grid:
    """
    Grid fixed across replications and tau values

    Spans settings.grid_range, or the X* quantile range given by
    settings.grid_quantiles, with the eval points merged in.
    """
    if settings.grid_range is not None:
        lo, hi = settings.grid_range
    else:
        dist = population_dist(spec.with_tau(0.0), qc)
        lo, hi = dist.quantile_xstar(list(settings.grid_quantiles))
    grid = Grid.linspace(float(lo), float(hi), settings.grid_size)
    if any(not grid.points[0] < x < grid.points[-1] for x in eval_points):
        raise OutOfRange(f"Eval points {list(eval_points)} must lie inside the grid "
                         f"({grid.points[0]:.4g}, {grid.points[-1]:.4g})")
    return grid.with_points(eval_points)


def _eval_index(grid: Grid, eval_points: Sequence[float]) -> np.ndarray:
    return np.array([grid.index_of(x) for x in eval_points], dtype=int)


# ============================================
# MONTE CARLO
# ============================================


def _estimators_on_curves(curves: CurveSet, spec: DgpSpec, settings: EstimatorSettings,
                          idx: np.ndarray) -> np.ndarray:
    """Rows naive, corrected, cme, known_v at the eval indices; NaN where masked or failed."""
    out = np.full((len(ESTIMATORS), idx.size), np.nan)
    pooled = curves.pooled

    out[0] = np.where(pooled.q.mask, pooled.q.g, np.nan)[idx]
    known = rho_tilde_known_v(pooled.q, pooled.s, lambda x: true_v(spec, x))
    out[3] = known.rho[idx]

    try:
        sk = v_tilde(curves, settings.rank_threshold, settings.density_floor)
    except MethodError as exc:
        logger.debug("replication: skedastic fit failed (%s)", exc)
        return out

    out[1] = rho_tilde(curves, sk, POOLED).rho[idx]
    try:
        out[2] = rho_tilde_cme(curves, sk, settings.anchor_x, POOLED).rho[idx]
    except EivError as exc:
        logger.debug("replication: classical-error variant failed (%s)", exc)
    return out


def _one_replication(cfg: McConfig, grid: Grid, idx: np.ndarray, rep: int) -> np.ndarray:
    data = sample(cfg.spec, cfg.n, cfg.seed, (cfg.cell, rep))
    try:
        curves = fit_curves(data, cfg.settings, grid)
    except EivError as exc:
        logger.debug("replication %d: curve fit failed (%s)", rep, exc)
        return np.full((len(ESTIMATORS), idx.size), np.nan)
    return _estimators_on_curves(curves, cfg.spec, cfg.settings, idx)


def run_mc(cfg: McConfig) -> McReport:
    """
    Replicate the full estimation pipeline and aggregate errors

    Replication r samples from stream (cfg.cell, r), so the report depends on
    the config only, not on worker count or scheduling. Failed replications
    become masked entries.

    Args:
        cfg: Experiment configuration

    Returns:
        McReport

    Raises:
        AllRepsFailed: the corrected estimator is masked in every replication
    """
    start = time.perf_counter()
    eval_points = cfg.eval_points or default_eval_points(cfg.spec)
    grid = experiment_grid(cfg.spec, cfg.settings, eval_points)
    idx = _eval_index(grid, eval_points)
    n_jobs = cfg.n_jobs or get_thread_count()

    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_replication)(cfg, grid, idx, rep) for rep in range(cfg.reps)
    )
    draws = np.stack(results)  # (reps, estimators, eval points)

    if not np.isfinite(draws[:, ESTIMATORS.index(CORRECTED), :]).any():
        raise AllRepsFailed(f"Corrected estimator masked at every eval point in all {cfg.reps} replications")

    truth = cfg.spec.rho_fn(np.asarray(eval_points))
    predicted = predicted_naive_bias(cfg.spec, grid)[POOLED].to_numpy()[idx]

    frames = []
    for k, name in enumerate(ESTIMATORS):
        summary = summarize_replications(draws[:, k, :], truth)
        summary.insert(0, TRUTH, truth)
        summary.insert(0, ESTIMATOR, name)
        summary.insert(0, EVAL_X, list(eval_points))
        if name == NAIVE:
            summary[PREDICTED_BIAS] = predicted
            summary['z_score'] = [check_bias_agreement(draws[:, k, j] - truth[j], predicted[j])['z_score']
                                  for j in range(idx.size)]
        else:
            summary[PREDICTED_BIAS] = np.nan
            summary['z_score'] = np.nan
        frames.append(summary)

    table = pd.concat(frames, ignore_index=True)
    n_masked = int((~np.isfinite(draws)).sum())
    if n_masked:
        logger.warning("run_mc: %d of %d estimator entries masked", n_masked, draws.size)

    echo = cfg.to_dict()
    echo['eval_points'] = list(eval_points)
    return McReport(table, echo, config_hash(echo), time.perf_counter() - start, tuple(eval_points))


# ============================================
# SWEEPS
# ============================================


def _max_abs(values: np.ndarray) -> float:
    values = np.abs(np.asarray(values, dtype=float))
    return float(values.max()) if np.all(np.isfinite(values)) else np.nan


def population_errors(spec: DgpSpec, grid: Grid, eval_points: Sequence[float],
                      qc: QuadratureConfig, settings: EstimatorSettings) -> Dict[str, float]:
    """
    Noise-free errors of every estimator at one tau

    Each error is the largest absolute deviation over the eval points; any
    masked eval point makes the error NaN.
    """
    idx = _eval_index(grid, eval_points)
    curves = population_curves(spec, grid, qc)
    truth = spec.rho_fn(grid.points[idx])
    out = {name: np.nan for name in ESTIMATORS + [V_ERROR, QUANTILE]}

    pooled = curves.pooled
    out[NAIVE] = _max_abs(pooled.q.g[idx] - truth)
    known = rho_tilde_known_v(pooled.q, pooled.s, lambda x: true_v(spec, x))
    out[KNOWN_V] = _max_abs(known.rho[idx] - truth)

    try:
        sk = v_tilde(curves, POPULATION_RANK_THRESHOLD, settings.density_floor)
    except MethodError as exc:
        logger.warning("population_errors: tau=%g skedastic fit failed (%s)", spec.tau, exc)
        return out

    corrected = rho_tilde(curves, sk, POOLED)
    out[CORRECTED] = _max_abs(corrected.rho[idx] - truth)
    out[V_ERROR] = _max_abs(sk.v[idx] - true_v(spec, grid.points[idx])[0])
    try:
        out[CME] = _max_abs(rho_tilde_cme(curves, sk, settings.anchor_x, POOLED).rho[idx] - truth)
    except EivError as exc:
        logger.warning("population_errors: tau=%g classical-error variant failed (%s)", spec.tau, exc)

    try:
        dist = population_dist(spec, qc)
        fit = dist_fit(pooled.f, sk, cdf_fn=dist.cdf_x, quantile_fn=dist.quantile_x,
                       score_fn=dist.score_x, floor_fraction=settings.density_floor)
        q_true = float(dist.quantile_xstar(QUANTILE_CHECK_LEVEL)[0])
        out[QUANTILE] = abs(float(fit.quantile_corr(QUANTILE_CHECK_LEVEL)[0]) - q_true)
        if spec.ncme_mu is not None:
            ext = ExternalMarginal.analytic(dist.cdf_kappa)
            value = rho_ncme(NCME_CHECK_POINT, ext, fit, corrected)
            out[NCME] = abs(value - float(dist.rho_kappa(NCME_CHECK_POINT)))
    except EivError as exc:
        logger.warning("population_errors: tau=%g distribution correction failed (%s)", spec.tau, exc)
    return out


def _slope_fits(axis: Sequence[float], table: pd.DataFrame, series: Sequence[str],
                min_points: int, floor: Optional[float]) -> Dict[str, Optional[Dict[str, Any]]]:
    slopes = {}
    for name in series:
        rows = table[table[ESTIMATOR] == name]
        if rows.empty:
            continue
        errors = rows.groupby(AXIS_VALUE, sort=False)[ERROR].first().reindex(axis).to_numpy()
        slopes[name] = fit_loglog_slope(axis, errors, min_points=min_points, floor=floor)
    return slopes


def tau_sweep(spec: DgpSpec, taus: Sequence[float], mode: str = 'population',
              cfg: Optional[McConfig] = None, qc: Optional[QuadratureConfig] = None,
              eval_points: Optional[Sequence[float]] = None,
              settings: Optional[EstimatorSettings] = None) -> SweepReport:
    """
    Error of every estimator along a geometric tau grid, with log-log slopes

    Population mode uses quadrature curves (no sampling noise); mc mode runs
    run_mc per tau and uses the largest |mean bias| over the eval points.

    Args:
        spec: Base data-generating process (its tau is replaced)
        taus: At least 4 tau values, geometrically spaced
        mode: 'population' or 'mc'
        cfg: Monte Carlo template (mc mode)
        qc: Quadrature settings (population mode)
        eval_points: Override the default X* quartiles
        settings: Estimator settings for population mode

    Returns:
        SweepReport
    """
    taus = [float(t) for t in taus]
    if len(taus) < MIN_TAU_POINTS:
        raise TooFewObservations(f"A tau sweep needs at least {MIN_TAU_POINTS} values, got {len(taus)}")
    if mode not in ('population', 'mc'):
        raise ValueError(f"Unknown sweep mode: {mode}. Choose 'population' or 'mc'")
    if not is_geometric(taus, GEOMETRIC_RTOL):
        warnings.warn(f"tau values {taus} are not geometrically spaced", NonGeometricTaus)

    qc = qc or QuadratureConfig()
    rows = []

    if mode == 'population':
        settings = settings or EstimatorSettings()
        eval_points = tuple(eval_points) if eval_points is not None else default_eval_points(spec, qc)
        grid = experiment_grid(spec, settings, eval_points, qc)
        for tau in taus:
            errors = population_errors(spec.with_tau(tau), grid, eval_points, qc, settings)
            logger.info("tau_sweep: tau=%g corrected=%.3g naive=%.3g", tau, errors[CORRECTED], errors[NAIVE])
            rows.extend({AXIS_VALUE: tau, ESTIMATOR: name, ERROR: value} for name, value in errors.items())
        floor = SLOPE_FLOOR_FACTOR * qc.abs_tol
    else:
        if cfg is None:
            raise ValueError("mc mode needs an McConfig template")
        for i, tau in enumerate(taus):
            report = run_mc(replace(cfg, spec=spec.with_tau(tau), cell=i))
            for name in ESTIMATORS:
                rows.append({AXIS_VALUE: tau, ESTIMATOR: name,
                             ERROR: _max_abs(report.metric(name, MEAN_BIAS))})
        floor = None

    table = pd.DataFrame(rows, columns=[AXIS_VALUE, ESTIMATOR, ERROR])
    series = list(dict.fromkeys(table[ESTIMATOR]))
    slopes = _slope_fits(taus, table, series, MIN_SLOPE_POINTS, floor)
    return SweepReport('tau', tuple(taus), mode, table, slopes, spec.order)


def n_sweep(spec: DgpSpec, ns: Sequence[int], tau_rule: TauRule = TauRule(),
            cfg: Optional[McConfig] = None) -> SweepReport:
    """
    RMSE of every estimator along a sample-size axis with tau = tau_rule(n)

    The slope of each estimator uses its RMSE averaged over the eval points
    and is fitted only with at least 3 sample sizes.

    Args:
        spec: Base data-generating process
        ns: Sample sizes
        tau_rule: Drifting measurement-error scale
        cfg: Monte Carlo template (its n, spec and cell are replaced)

    Returns:
        SweepReport whose extra['corrected_win_fraction'] maps n to the share of
        eval points, among those where both RMSEs exist, with corrected RMSE < naive RMSE
    """
    ns = [int(n) for n in ns]
    if not ns:
        raise TooFewObservations("An n sweep needs at least one sample size")
    cfg = cfg or McConfig(spec=spec, n=ns[0])

    rows = []
    wins = {}
    for i, n in enumerate(ns):
        tau = tau_rule(n)
        report = run_mc(replace(cfg, spec=spec.with_tau(tau), n=n, cell=i))
        for name in ESTIMATORS:
            part = report.table[report.table[ESTIMATOR] == name]
            mean_rmse = float(np.nanmean(part[RMSE])) if part[RMSE].notna().any() else np.nan
            for _, row in part.iterrows():
                rows.append({AXIS_VALUE: n, 'tau': tau, ESTIMATOR: name, EVAL_X: row[EVAL_X],
                             RMSE: row[RMSE], MEAN_BIAS: row[MEAN_BIAS], ERROR: mean_rmse})
        corrected = report.metric(CORRECTED, RMSE)
        naive = report.metric(NAIVE, RMSE)
        wins[n] = win_fraction(corrected, naive)
        logger.info("n_sweep: n=%d tau=%.4g corrected wins at %.0f%% of eval points", n, tau, 100 * wins[n])

    table = pd.DataFrame(rows, columns=[AXIS_VALUE, 'tau', ESTIMATOR, EVAL_X, RMSE, MEAN_BIAS, ERROR])
    if len(ns) >= MIN_SLOPE_POINTS:
        slopes = _slope_fits(ns, table, ESTIMATORS, MIN_SLOPE_POINTS, None)
    else:
        slopes = {name: None for name in ESTIMATORS}

    return SweepReport('n', tuple(ns), 'mc', table, slopes, spec.order,
                       extra={'corrected_win_fraction': wins,
                              'tau_rule': {'multiplier': tau_rule.multiplier, 'exponent': tau_rule.exponent}})
