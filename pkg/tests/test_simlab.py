# pylint: disable=redefined-outer-name
"""Tests for Monte Carlo replications and the tau / n sweeps."""

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from analysis.oracle import DgpSpec
from analysis.pipeline import EstimatorSettings
from analysis.simlab import (
    McConfig, SweepReport, TauRule, default_eval_points, experiment_grid, n_sweep, run_mc, tau_sweep,
)
from analysis.statistics import win_fraction
from utils.errors import NonGeometricTaus, OutOfRange, TooFewObservations

TAUS = [0.05, 0.1, 0.2, 0.4]


@pytest.fixture(scope='module')
def symmetric_sweep():
    return tau_sweep(DgpSpec.from_catalog('gaussian_symmetric'), TAUS)


@pytest.fixture
def small_mc(gaussian_spec):
    return McConfig(spec=gaussian_spec, n=1000, reps=3, seed=7, eval_points=(0.0, 0.5, 1.0), n_jobs=1)


class TestConfig:

    def test_tau_rule(self):
        assert TauRule()(1000) == pytest.approx(0.8 * 1000 ** (-1.0 / 12.0))
        assert TauRule(0.0)(4000) == 0.0

    def test_mc_config_checks(self, gaussian_spec):
        with pytest.raises(ValueError, match="reps"):
            McConfig(spec=gaussian_spec, n=1000, reps=1)
        with pytest.raises(TooFewObservations):
            McConfig(spec=gaussian_spec, n=0)

    def test_default_eval_points_are_latent_quartiles(self, gaussian_spec):
        points = default_eval_points(gaussian_spec)
        assert points[1] == pytest.approx(0.5, abs=1e-9)
        assert points[0] == pytest.approx(1.0 - points[2], abs=1e-9)

    def test_eval_points_must_lie_inside_the_grid(self, gaussian_spec):
        with pytest.raises(OutOfRange):
            experiment_grid(gaussian_spec, EstimatorSettings(), [0.5, 10.0])

    def test_grid_contains_eval_points(self, gaussian_spec):
        grid = experiment_grid(gaussian_spec, EstimatorSettings(grid_range=(-1.0, 2.0)), [0.123])
        assert grid.index_of(0.123) is not None


class TestPopulationSweep:

    def test_symmetric_error_slopes(self, symmetric_sweep):
        assert symmetric_sweep.order == 4
        for series in ('corrected', 'cme', 'known_v', 'v_tilde', 'quantile'):
            assert symmetric_sweep.slope(series) >= 3.6, series
        assert 1.8 <= symmetric_sweep.slope('naive') <= 2.2

    def test_checks_pass(self, symmetric_sweep):
        checks = symmetric_sweep.checks()
        assert checks['corrected_slope']['pass']
        assert checks['naive_slope']['window'] == [1.8, 2.2]
        assert all(check['pass'] for check in checks.values())
        assert 'ncme_slope' not in checks

    def test_errors_shrink_with_tau(self, symmetric_sweep):
        errors = symmetric_sweep.errors('corrected')
        assert np.all(np.diff(errors) > 0)
        assert errors[2] < symmetric_sweep.errors('naive')[2]

    def test_asymmetric_error(self):
        report = tau_sweep(DgpSpec.from_catalog('gaussian_asymmetric'), TAUS)
        assert report.order == 3
        assert report.slope('corrected') >= 2.6

    def test_latent_covariate_regression(self):
        report = tau_sweep(DgpSpec.from_catalog('ncme_cubic'), TAUS)
        assert report.slope('ncme') >= 3.6

    def test_needs_four_values(self, gaussian_spec):
        with pytest.raises(TooFewObservations):
            tau_sweep(gaussian_spec, [0.1, 0.2, 0.4])

    def test_unknown_mode(self, gaussian_spec):
        with pytest.raises(ValueError, match="Unknown sweep mode"):
            tau_sweep(gaussian_spec, TAUS, mode='bootstrap')

    def test_non_geometric_values_warn(self, gaussian_spec):
        with pytest.warns(NonGeometricTaus):
            report = tau_sweep(gaussian_spec, [0.05, 0.1, 0.2, 0.3])
        assert math.isfinite(report.slope('corrected'))

    def test_mc_mode_needs_a_template(self, gaussian_spec):
        with pytest.raises(ValueError, match="McConfig"):
            tau_sweep(gaussian_spec, TAUS, mode='mc')


class TestRunMc:

    def test_report_layout(self, small_mc):
        report = run_mc(small_mc)
        assert set(report.table['estimator']) == {'naive', 'corrected', 'cme', 'known_v'}
        assert len(report.table) == 12
        table = report.table
        np.testing.assert_allclose(table['rmse'] ** 2, table['mean_bias'] ** 2 + table['sd'] ** 2,
                                   atol=1e-10)
        assert table['masked_fraction'].between(0.0, 1.0).all()
        assert report.config['eval_points'] == [0.0, 0.5, 1.0]
        assert report.wall_time >= 0.0

    def test_deterministic(self, small_mc):
        first = run_mc(small_mc).table
        second = run_mc(small_mc).table
        assert first.equals(second)

    def test_cell_changes_the_streams(self, small_mc):
        first = run_mc(small_mc).table
        other = run_mc(replace(small_mc, cell=1)).table
        assert not np.allclose(first['mean_bias'], other['mean_bias'], equal_nan=True)

    def test_predicted_bias_on_naive_rows_only(self, small_mc):
        table = run_mc(small_mc).table
        naive = table[table['estimator'] == 'naive']
        assert naive['predicted_bias'].notna().all()
        assert table[table['estimator'] != 'naive']['predicted_bias'].isna().all()

    @pytest.mark.slow
    def test_naive_bias_matches_prediction(self, gaussian_spec):
        cfg = McConfig(spec=gaussian_spec.with_tau(0.3), n=4000, reps=200, eval_points=(0.5,))
        report = run_mc(cfg)
        naive = report.cell('naive', 0.5)
        corrected = report.cell('corrected', 0.5)
        assert abs(naive['z_score']) <= 3.0
        assert abs(corrected['mean_bias']) < abs(naive['mean_bias'])

    @pytest.mark.slow
    def test_corrections_at_the_outer_quartiles(self, gaussian_spec):
        cfg = McConfig(spec=gaussian_spec.with_tau(0.3), n=4000, reps=200)
        report = run_mc(cfg)
        for x in (report.eval_points[0], report.eval_points[-1]):
            assert abs(report.cell('corrected', x)['mean_bias']) < abs(report.cell('naive', x)['mean_bias'])
        naive = report.metric('naive', 'rmse')
        assert win_fraction(report.metric('cme', 'rmse'), naive) >= 2.0 / 3.0

    @pytest.mark.slow
    def test_corrected_rmse_wins_at_large_n(self, gaussian_spec):
        n = 16000
        cfg = McConfig(spec=gaussian_spec.with_tau(TauRule()(n)), n=n, reps=50)
        report = run_mc(cfg)
        wins = win_fraction(report.metric('corrected', 'rmse'), report.metric('naive', 'rmse'))
        assert wins >= 2.0 / 3.0

    @pytest.mark.slow
    def test_no_error_means_no_systematic_difference(self, gaussian_spec):
        cfg = McConfig(spec=gaussian_spec.with_tau(0.0), n=4000, reps=100)
        report = run_mc(cfg)
        for x in report.eval_points:
            naive = report.cell('naive', x)
            corrected = report.cell('corrected', x)
            combined = math.hypot(naive['sd'], corrected['sd']) / math.sqrt(cfg.reps)
            assert abs(corrected['mean_bias'] - naive['mean_bias']) < 2.0 * combined


class TestNSweep:

    def test_single_sample_size_omits_slopes(self, gaussian_spec):
        cfg = McConfig(spec=gaussian_spec, n=1000, reps=2, eval_points=(0.5,), n_jobs=1)
        report = n_sweep(gaussian_spec, [1000], cfg=cfg)
        assert all(fit is None for fit in report.slopes.values())
        assert np.isnan(report.slope('corrected'))
        assert report.extra['tau_rule'] == {'multiplier': 0.8, 'exponent': -1.0 / 12.0}
        np.testing.assert_allclose(report.table['tau'], 0.8 * 1000 ** (-1.0 / 12.0))

    def test_unusable_win_fraction_fails_the_check(self):
        table = pd.DataFrame({'axis_value': [1000], 'estimator': ['corrected'], 'error': [0.1]})
        report = SweepReport('n', (1000,), 'mc', table, {}, 4, extra={'corrected_win_fraction': {1000: np.nan}})
        check = report.checks()['corrected_beats_naive_at_largest_n']
        assert check['pass'] is False

    def test_needs_a_sample_size(self, gaussian_spec):
        with pytest.raises(TooFewObservations):
            n_sweep(gaussian_spec, [])

    @pytest.mark.slow
    def test_corrected_wins_at_the_largest_n(self, gaussian_spec):
        cfg = McConfig(spec=gaussian_spec, n=1000, reps=50)
        report = n_sweep(gaussian_spec, [1000, 4000, 16000], cfg=cfg)
        assert report.checks()['corrected_beats_naive_at_largest_n']['pass']
