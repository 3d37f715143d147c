"""Tests for kernel density, local polynomial and bandwidth routines."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from analysis.nonparam import (
    DensityCurve, Grid, KernelSpec, kde, local_poly_fit, score_from_density, select_bandwidth,
    subsample_rescale,
)
from utils.errors import EmptyData, LengthMismatch, NonpositiveBandwidth, TooFewObservations

PHI_0 = 1.0 / math.sqrt(2.0 * math.pi)


class TestGrid:

    def test_rejects_short_or_unsorted_points(self):
        with pytest.raises(ValueError):
            Grid([0.0, 1.0])
        with pytest.raises(ValueError):
            Grid([0.0, 2.0, 1.0])
        with pytest.raises(ValueError):
            Grid([0.0, np.inf, 2.0])

    def test_with_points_merges_and_drops_duplicates(self):
        grid = Grid.linspace(0.0, 1.0, 3).with_points([0.25, 0.5])
        np.testing.assert_allclose(grid.points, [0.0, 0.25, 0.5, 1.0])
        assert grid.index_of(0.25) == 1
        assert grid.index_of(0.3) is None


class TestKde:

    def test_single_point_is_the_kernel(self):
        grid = Grid([-1.0, 0.0, 1.0])
        curve = kde([0.0], KernelSpec(bandwidth=1.0), grid)
        assert curve.f[1] == pytest.approx(PHI_0, abs=1e-12)
        assert curve.f1[1] == pytest.approx(0.0, abs=1e-12)
        assert curve.f2[1] == pytest.approx(-PHI_0, abs=1e-12)

    def test_two_symmetric_points(self):
        grid = Grid([-1.0, 0.0, 1.0])
        curve = kde([-1.0, 1.0], KernelSpec(bandwidth=1.0), grid)
        assert curve.f[1] == pytest.approx(PHI_0 * math.exp(-0.5), abs=1e-12)
        assert curve.f1[1] == pytest.approx(0.0, abs=1e-12)

    def test_large_sample_matches_smoothed_normal(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal(100_000)
        h = select_bandwidth(data)
        curve = kde(data, KernelSpec(bandwidth=h), Grid([-0.5, 0.0, 0.5]))
        # Gaussian smoothing of N(0,1) gives N(0, 1 + h^2)
        assert curve.f[1] == pytest.approx(PHI_0 / math.sqrt(1.0 + h * h), abs=8e-3)
        assert abs(curve.f[1] - PHI_0) < 0.03

    @pytest.mark.parametrize("family", ["gaussian", "epanechnikov-smoothed"])
    def test_integrates_to_one(self, family):
        rng = np.random.default_rng(5)
        data = rng.normal(1.0, 2.0, size=2000)
        h = select_bandwidth(data, family=family)
        grid = Grid.linspace(data.min() - 5 * h, data.max() + 5 * h, 4001)
        curve = kde(data, KernelSpec(family, h), grid)
        assert trapezoid(curve.f, grid.points) == pytest.approx(1.0, abs=0.01)

    def test_shift_equivariance(self):
        data = np.random.default_rng(8).normal(0.0, 1.0, 500)
        grid = Grid.linspace(-2.0, 2.0, 41)
        shifted_grid = Grid(grid.points + 3.0)
        base = kde(data, KernelSpec(bandwidth=0.4), grid)
        moved = kde(data + 3.0, KernelSpec(bandwidth=0.4), shifted_grid)
        for name in ('f', 'f1', 'f2'):
            np.testing.assert_allclose(getattr(moved, name), getattr(base, name), rtol=1e-9, atol=1e-12)
        s_base = score_from_density(base, 1e-6)
        s_moved = score_from_density(moved, 1e-6)
        np.testing.assert_allclose(s_moved.s, s_base.s, rtol=1e-9, atol=1e-12)

    def test_scale_equivariance(self):
        data = np.random.default_rng(9).normal(0.0, 1.0, 500)
        grid = Grid.linspace(-2.0, 2.0, 41)
        a = 2.5
        base = kde(data, KernelSpec(bandwidth=0.4), grid)
        scaled = kde(a * data, KernelSpec(bandwidth=a * 0.4), Grid(a * grid.points))
        np.testing.assert_allclose(scaled.f, base.f / a, rtol=1e-9)
        np.testing.assert_allclose(scaled.f1, base.f1 / a ** 2, rtol=1e-9, atol=1e-14)
        np.testing.assert_allclose(scaled.f2, base.f2 / a ** 3, rtol=1e-9, atol=1e-14)
        s_base = score_from_density(base, 1e-6)
        s_scaled = score_from_density(scaled, 1e-6 / a)
        np.testing.assert_allclose(s_scaled.s, s_base.s / a, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(s_scaled.s1, s_base.s1 / a ** 2, rtol=1e-9, atol=1e-12)

    def test_derivative_orders_limit(self):
        curve = kde([0.0, 1.0], KernelSpec(bandwidth=1.0, derivative_orders=0), Grid([0.0, 0.5, 1.0]))
        assert np.all(curve.f1 == 0.0)
        assert np.all(curve.f2 == 0.0)

    def test_errors(self):
        with pytest.raises(EmptyData):
            kde([], KernelSpec(), Grid([0.0, 1.0, 2.0]))
        with pytest.raises(NonpositiveBandwidth):
            KernelSpec(bandwidth=0.0)
        with pytest.raises(ValueError):
            KernelSpec(family='box')


class TestLocalPolyFit:

    @pytest.fixture
    def design(self):
        return np.linspace(-2.0, 2.0, 401)

    def test_reproduces_a_line(self, design):
        grid = Grid.linspace(-1.5, 1.5, 7)
        curve = local_poly_fit(design, 2.0 * design + 1.0, 2, KernelSpec(bandwidth=0.4), grid)
        np.testing.assert_allclose(curve.g, 2.0 * grid.points + 1.0, atol=1e-10)
        np.testing.assert_allclose(curve.g1, 2.0, atol=1e-10)
        np.testing.assert_allclose(curve.g2, 0.0, atol=1e-9)
        assert curve.mask.all()

    @pytest.mark.parametrize("degree", [2, 3])
    def test_reproduces_a_quadratic(self, design, degree):
        grid = Grid([0.0, 1.0, 1.5])
        curve = local_poly_fit(design, design ** 2, degree, KernelSpec(bandwidth=0.5), grid)
        assert curve.g1[1] == pytest.approx(2.0, abs=1e-9)
        assert curve.g2[1] == pytest.approx(2.0, abs=1e-8)

    def test_inflated_derivative_bandwidths_still_reproduce_a_cubic(self, design):
        grid = Grid([-0.5, 0.0, 0.5])
        spec = KernelSpec(bandwidth=0.4, derivative_inflation=1.2)
        curve = local_poly_fit(design, design ** 3, 3, spec, grid)
        np.testing.assert_allclose(curve.g1, 3.0 * grid.points ** 2, atol=1e-8)
        np.testing.assert_allclose(curve.g2, 6.0 * grid.points, atol=1e-7)

    def test_noisy_exponential_with_cv_bandwidth(self):
        rng = np.random.default_rng(17)
        x = rng.uniform(-2.0, 2.0, 10_000)
        y = np.exp(x / 2.0) + 0.1 * rng.standard_normal(x.size)
        h = select_bandwidth((x, y), 'least_squares_cv', 'regression', degree=3)
        curve = local_poly_fit(x, y, 3, KernelSpec(bandwidth=h), Grid([0.0, 0.5, 1.0]))
        assert curve.g[1] == pytest.approx(math.exp(0.25), abs=0.02)

    def test_sparse_points_are_masked(self):
        x = np.array([0.0, 0.1, 0.2, 0.3, 5.0])
        grid = Grid([0.1, 2.5, 5.0])
        curve = local_poly_fit(x, x, 2, KernelSpec('epanechnikov-smoothed', 0.5), grid)
        assert curve.mask[0]
        assert not curve.mask[1]
        assert not curve.mask[2]

    def test_errors(self):
        grid = Grid([0.0, 0.5, 1.0])
        with pytest.raises(LengthMismatch):
            local_poly_fit([0.0, 1.0, 2.0], [1.0, 2.0], 2, KernelSpec(), grid)
        with pytest.raises(TooFewObservations):
            local_poly_fit([0.0, 1.0], [1.0, 2.0], 2, KernelSpec(), grid)
        with pytest.raises(ValueError):
            local_poly_fit(np.arange(10.0), np.arange(10.0), 4, KernelSpec(), grid)


class TestScore:

    def test_normal_density_score(self):
        grid = Grid.linspace(-2.0, 2.0, 9)
        x = grid.points
        f = PHI_0 * np.exp(-0.5 * x * x)
        curve = DensityCurve(grid, f, -x * f, (x * x - 1.0) * f)
        score = score_from_density(curve, 1e-6)
        np.testing.assert_allclose(score.s, -x, atol=1e-12)
        np.testing.assert_allclose(score.s1, -1.0, atol=1e-12)

    @pytest.mark.parametrize("family", ["gaussian", "epanechnikov-smoothed"])
    def test_s1_is_the_grid_derivative_of_s(self, family):
        data = np.random.default_rng(4).normal(0.0, 1.0, 2000)
        h = select_bandwidth(data, family=family)
        grid = Grid.linspace(-1.5, 1.5, 601)
        score = score_from_density(kde(data, KernelSpec(family, h), grid), 1e-6)
        assert score.mask.all()
        numeric = np.gradient(score.s, grid.points)
        np.testing.assert_allclose(score.s1[1:-1], numeric[1:-1], atol=1e-3)

    def test_points_below_floor_are_masked(self):
        grid = Grid([0.0, 1.0, 2.0])
        curve = DensityCurve(grid, [0.5, 0.01, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        score = score_from_density(curve, 0.05)
        assert score.mask.tolist() == [True, False, True]
        assert np.isnan(score.s[1])

    def test_rejects_nonpositive_floor(self):
        curve = DensityCurve(Grid([0.0, 1.0, 2.0]), [0.1, 0.2, 0.1], [0, 0, 0], [0, 0, 0])
        with pytest.raises(ValueError):
            score_from_density(curve, 0.0)


class TestSelectBandwidth:

    def test_rule_of_thumb_formula(self):
        data = np.random.default_rng(0).standard_normal(10_000)
        expected = 1.06 * np.std(data, ddof=1) * 10_000 ** (-1.0 / 9.0)
        assert select_bandwidth(data) == pytest.approx(expected, rel=1e-12)
        assert select_bandwidth(data) == pytest.approx(1.06 * 0.3594, rel=0.03)

    def test_triweight_rule_is_scaled(self):
        data = np.random.default_rng(1).standard_normal(500)
        ratio = select_bandwidth(data, family='epanechnikov-smoothed') / select_bandwidth(data)
        assert ratio == pytest.approx(2.978)

    def test_density_cv_lies_in_candidate_span(self):
        data = np.random.default_rng(2).standard_normal(400)
        base = select_bandwidth(data)
        h = select_bandwidth(data, 'least_squares_cv', 'density')
        assert 0.1 * base * (1 - 1e-9) <= h <= 10.0 * base * (1 + 1e-9)

    @pytest.mark.parametrize("method", ["rule_of_thumb", "least_squares_cv"])
    def test_scale_and_shift_equivariance(self, method):
        data = np.random.default_rng(6).standard_normal(300)
        h = select_bandwidth(data, method)
        assert select_bandwidth(3.0 * data + 7.0, method) == pytest.approx(3.0 * h, rel=1e-9)

    def test_cv_on_a_subsample_is_carried_to_the_full_size(self):
        data = np.random.default_rng(12).standard_normal(4000)
        keep = np.unique(np.linspace(0, data.size - 1, 800).round().astype(int))
        assert keep.size == 800
        h_sub = select_bandwidth(data[keep], 'least_squares_cv')
        h_full = select_bandwidth(data, 'least_squares_cv')
        assert h_full == pytest.approx(h_sub * (800 / 4000) ** (1.0 / 9.0), rel=1e-12)
        assert h_full < h_sub

    def test_subsample_rescale(self):
        assert subsample_rescale(800, 800 * 2 ** 9) == pytest.approx(0.5)
        assert subsample_rescale(500, 500) == 1.0

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="Unrecognized bandwidth method"):
            select_bandwidth([0.0, 1.0, 2.0], method='silverman')

    def test_cv_needs_enough_observations(self):
        with pytest.raises(TooFewObservations):
            select_bandwidth(np.arange(10.0), 'least_squares_cv')

    def test_regression_needs_pairs(self):
        with pytest.raises(ValueError):
            select_bandwidth(np.arange(10.0), purpose='regression')
