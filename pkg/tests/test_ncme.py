# pylint: disable=redefined-outer-name
"""Tests for the corrected marginal distribution and the latent-covariate regression."""

import math

import numpy as np
import pytest
from scipy import stats

from analysis.ncme import ExternalMarginal, dist_fit, locate_ncme, rho_ncme, rho_ncme_quantile
from analysis.nonparam import DensityCurve, Grid
from analysis.oracle import DgpSpec, population_curves, population_dist, true_v
from analysis.wcme import CorrectedCurve, SkedasticFit, rho_tilde, rho_tilde_known_v, v_tilde
from utils.errors import (
    LengthMismatch, MaskedTarget, NonMonotoneMarginal, OutOfRange, SkedasticRangeTooSmall,
    TooFewObservations,
)

TAU = 0.2
OBS_SD = math.sqrt(1.0 + TAU ** 2)


@pytest.fixture
def wide_grid():
    return Grid(np.round(np.linspace(-3.0, 3.0, 121), 10))


@pytest.fixture
def normal_density(wide_grid):
    """Density of X = X* + tau * zeta with X* and zeta standard normal."""
    x = wide_grid.points
    f = stats.norm.pdf(x, scale=OBS_SD)
    return DensityCurve(wide_grid, f, -x / OBS_SD ** 2 * f, (x * x / OBS_SD ** 4 - 1.0 / OBS_SD ** 2) * f)


@pytest.fixture
def homoskedastic(wide_grid):
    n = len(wide_grid)
    return SkedasticFit.from_known(wide_grid, np.full(n, TAU ** 2), np.zeros(n))


def exact_normal_fit(f_curve, sk):
    law = stats.norm(scale=OBS_SD)
    return dist_fit(f_curve, sk, cdf_fn=law.cdf, quantile_fn=law.ppf,
                    score_fn=lambda x: -np.asarray(x) / OBS_SD ** 2)


def population_pipeline(spec, grid):
    """Population curves, corrected regression and corrected distribution for one spec."""
    curves = population_curves(spec, grid)
    sk = v_tilde(curves)
    dist = population_dist(spec)
    fit = dist_fit(curves.pooled.f, sk, cdf_fn=dist.cdf_x, quantile_fn=dist.quantile_x,
                   score_fn=dist.score_x)
    return dist, fit, rho_tilde(curves, sk)


class TestExternalMarginal:

    def test_table_matches_the_analytic_cdf(self):
        k = np.linspace(-4.0, 4.0, 401)
        ext = ExternalMarginal.from_table(k, stats.norm.cdf(k))
        assert ext.source == 'table'
        assert ext.cdf(0.37) == pytest.approx(stats.norm.cdf(0.37), abs=1e-6)

    def test_table_errors(self):
        k = np.linspace(-4.0, 4.0, 150)
        F = stats.norm.cdf(k)
        with pytest.raises(TooFewObservations):
            ExternalMarginal.from_table(k[:50], F[:50])
        with pytest.raises(LengthMismatch):
            ExternalMarginal.from_table(k, F[:-1])
        flat = F.copy()
        flat[70] = flat[69]
        with pytest.raises(NonMonotoneMarginal, match="row 71"):
            ExternalMarginal.from_table(k, flat)
        with pytest.raises(NonMonotoneMarginal):
            ExternalMarginal.from_table(k, F + 0.5)

    def test_outside_the_table(self):
        k = np.linspace(-2.0, 2.0, 200)
        ext = ExternalMarginal.from_table(k, stats.norm.cdf(k))
        with pytest.raises(OutOfRange):
            ext.cdf(2.5)


class TestDistFit:

    def test_corrected_cdf_moves_toward_the_latent_law(self, normal_density, homoskedastic):
        fit = exact_normal_fit(normal_density, homoskedastic)
        truth = stats.norm.cdf(1.0)
        corrected = fit.cdf_corr_at(1.0)
        observed = float(np.interp(1.0, fit.grid.points, fit.cdf_x))
        assert abs(corrected - truth) <= 1e-3
        assert abs(corrected - truth) < abs(observed - truth)

    def test_corrected_quantile_close_to_latent(self, normal_density, homoskedastic):
        fit = exact_normal_fit(normal_density, homoskedastic)
        levels = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
        np.testing.assert_allclose(fit.quantile_corr(levels), stats.norm.ppf(levels), atol=2e-3)
        assert fit.violation < 1e-12

    def test_interpolated_quantile_inverts_the_cdf(self, normal_density, homoskedastic):
        fit = dist_fit(normal_density, homoskedastic, cdf_fn=stats.norm(scale=OBS_SD).cdf)
        pts = fit.grid.points[10:-10:10]
        levels = stats.norm.cdf(pts, scale=OBS_SD)
        np.testing.assert_allclose(fit.quantile_x(levels), pts, atol=1e-10)

    def test_integrated_cdf_from_the_density(self, normal_density, homoskedastic):
        start = float(stats.norm.cdf(-3.0, scale=OBS_SD))
        fit = dist_fit(normal_density, homoskedastic, cdf_at_start=start)
        np.testing.assert_allclose(fit.cdf_x, stats.norm.cdf(fit.grid.points, scale=OBS_SD), atol=5e-4)

    def test_isotonic_projection_keeps_quantiles_monotone(self, wide_grid, normal_density):
        x = wide_grid.points
        wiggly = SkedasticFit.from_known(wide_grid, np.zeros_like(x), 0.6 * np.sin(6.0 * x))
        fit = exact_normal_fit(normal_density, wiggly)
        assert fit.violation > 0
        levels = np.linspace(0.05, 0.95, 400)
        assert np.all(np.diff(fit.quantile_corr(levels)) >= -1e-12)

    def test_masked_skedastic_points_get_no_correction(self, wide_grid, normal_density):
        n = len(wide_grid)
        v = np.full(n, TAU ** 2)
        v[:20] = np.nan
        fit = exact_normal_fit(normal_density, SkedasticFit.from_known(wide_grid, v, np.zeros(n)))
        assert fit.fallback[:20].all()
        np.testing.assert_allclose(fit.cdf_corr[:20], fit.cdf_x[:20])

    def test_too_little_valid_mass(self, wide_grid, normal_density):
        n = len(wide_grid)
        v = np.full(n, np.nan)
        v[:30] = TAU ** 2
        with pytest.raises(SkedasticRangeTooSmall):
            exact_normal_fit(normal_density, SkedasticFit.from_known(wide_grid, v, np.zeros(n)))

    def test_levels_outside_unit_interval(self, normal_density, homoskedastic):
        fit = exact_normal_fit(normal_density, homoskedastic)
        with pytest.raises(OutOfRange):
            fit.quantile_corr([0.0])
        with pytest.raises(OutOfRange):
            fit.quantile_corr([1.2])


class TestComposedRegression:

    @pytest.fixture
    def cubic_pipeline(self, pop_grid):
        spec = DgpSpec.from_catalog('ncme_cubic')
        return population_pipeline(spec, pop_grid)

    def test_latent_regression_at_the_check_point(self, cubic_pipeline):
        dist, fit, corrected = cubic_pipeline
        ext = ExternalMarginal.analytic(dist.cdf_kappa)
        value = rho_ncme(0.5, ext, fit, corrected)
        assert abs(value - float(dist.rho_kappa(0.5))) <= 2e-3

    def test_quantile_route_agrees(self, cubic_pipeline):
        dist, fit, corrected = cubic_pipeline
        ext = ExternalMarginal.analytic(dist.cdf_kappa)
        value, level, target = locate_ncme(0.5, ext, fit, corrected)
        assert rho_ncme_quantile(level, fit, corrected) == pytest.approx(value, abs=1e-8)
        assert target == pytest.approx(float(dist.quantile_xstar(level)[0]), abs=2e-3)

    def test_upper_quartile(self, cubic_pipeline):
        dist, fit, corrected = cubic_pipeline
        truth = float(dist.spec.rho_fn(dist.quantile_xstar(0.75))[0])
        assert abs(rho_ncme_quantile(0.75, fit, corrected) - truth) <= 2e-3

    def test_symmetric_model_median(self):
        spec = DgpSpec.from_catalog('symmetric_logistic')
        grid = Grid(np.round(np.linspace(-2.0, 2.0, 81), 10))
        curves = population_curves(spec, grid)
        sk = SkedasticFit.from_known(grid, *true_v(spec, grid.points))
        dist = population_dist(spec)
        fit = dist_fit(curves.pooled.f, sk, cdf_fn=dist.cdf_x, quantile_fn=dist.quantile_x,
                       score_fn=dist.score_x)
        corrected = rho_tilde_known_v(curves.pooled.q, curves.pooled.s, lambda x: true_v(spec, x))
        assert rho_ncme_quantile(0.5, fit, corrected) == pytest.approx(0.5, abs=1e-6)

    def test_masked_target(self, normal_density, homoskedastic, wide_grid):
        fit = exact_normal_fit(normal_density, homoskedastic)
        x = wide_grid.points
        mask = np.abs(x) > 0.5
        corrected = CorrectedCurve(wide_grid, np.exp(x / 2.0), np.exp(x / 2.0), mask)
        with pytest.raises(MaskedTarget):
            rho_ncme_quantile(0.5, fit, corrected)
        assert rho_ncme_quantile(0.9, fit, corrected) == pytest.approx(
            math.exp(stats.norm.ppf(0.9) / 2.0), abs=5e-3)

    def test_levels_on_the_boundary(self, normal_density, homoskedastic, wide_grid):
        fit = exact_normal_fit(normal_density, homoskedastic)
        x = wide_grid.points
        corrected = CorrectedCurve(wide_grid, x, x, np.ones(x.size, dtype=bool))
        with pytest.raises(OutOfRange):
            rho_ncme_quantile(1.0, fit, corrected)
        degenerate = ExternalMarginal.analytic(lambda k: np.zeros_like(k))
        with pytest.raises(OutOfRange):
            rho_ncme(0.0, degenerate, fit, corrected)
