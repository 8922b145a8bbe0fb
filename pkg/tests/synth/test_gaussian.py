import numpy as np
import pytest
from pydantic import ValidationError

from tailrlab.synth.gaussian import *

GRID = GridSpec(points=801)
DESCENT = DescentSpec(max_iterations=2000)


@pytest.fixture(scope='module')
def mixture() -> MixtureSpec:
    return MixtureSpec()


@pytest.fixture(scope='module')
def kld_fit(mixture) -> GaussianFit:
    return toy_gaussian_fit(mixture, 'kld', GRID, DESCENT)


@pytest.fixture(scope='module')
def tvd_fit(mixture) -> GaussianFit:
    return toy_gaussian_fit(mixture, 'tvd', GRID, DESCENT)


class TestMixtureSpec:
    def test_moments(self, mixture):
        assert mixture.mean == pytest.approx(-1.0)
        assert mixture.variance == pytest.approx(4.49)

    def test_density_integrates_to_one(self, mixture):
        points = GRID.build(mixture)
        assert mixture.density(points).sum() * (points[1] - points[0]) == pytest.approx(1.0, abs=1e-6)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError) as exception_info:
            MixtureSpec(weights=(0.5, 0.6))

        assert 'must sum to 1' in str(exception_info.value)

    def test_grid_spans_both_components(self, mixture):
        points = GridSpec(points=5, span_sigmas=2.0).build(mixture)
        assert points.tolist() == pytest.approx([-3.4, -1.45, 0.5, 2.45, 4.4])


class TestFits:
    def test_kld_fit_matches_the_mixture_moments(self, kld_fit, mixture):
        assert kld_fit.converged
        assert kld_fit.mu == pytest.approx(mixture.mean, abs=1e-3)
        assert kld_fit.sigma == pytest.approx(np.sqrt(mixture.variance), abs=1e-3)

    def test_tvd_fit_settles_on_the_heavier_mode(self, tvd_fit):
        assert tvd_fit.mu == pytest.approx(-2.0, abs=0.5)
        assert tvd_fit.sigma < 1.5
        assert tvd_fit.divergence == pytest.approx(0.2, abs=0.1)

    def test_kld_fit_puts_more_mass_in_the_void(self, kld_fit, tvd_fit):
        assert kld_fit.void_interval == tvd_fit.void_interval
        low, high = kld_fit.void_interval
        assert -2.0 < low < high < 3.0
        assert kld_fit.void_mass > 2 * tvd_fit.void_mass

    def test_divergences_are_nonnegative(self, kld_fit, tvd_fit):
        assert kld_fit.divergence >= 0.0
        assert 0.0 <= tvd_fit.divergence <= 1.0

    def test_rows_match_the_header(self, kld_fit):
        row = kld_fit.row()
        assert len(row) == len(FIT_HEADER)
        assert row[0] == 'kld'
        assert row[6:8] == kld_fit.void_interval

    def test_unknown_objective(self, mixture):
        with pytest.raises(ValueError) as exception_info:
            toy_gaussian_fit(mixture, 'jsd', GRID, DESCENT)

        assert 'jsd' in str(exception_info.value)

    def test_overlapping_modes_have_no_void(self):
        mixture = MixtureSpec(means=(0.0, 0.5), stds=(1.0, 1.0))
        assert void_interval(mixture, GRID.build(mixture)) is None

        fit = toy_gaussian_fit(mixture, 'kld', GRID, DESCENT)
        assert fit.void_mass == 0.0
        assert fit.row()[6:8] == ('', '')

    def test_iteration_budget_is_reported(self, mixture):
        fit = toy_gaussian_fit(mixture, 'tvd', GRID, DescentSpec(max_iterations=1, gradient_tolerance=1e-300))
        assert fit.iterations <= 1


class TestQuadrature:
    def test_identical_densities(self, mixture):
        points = GRID.build(mixture)
        density = mixture.density(points)
        dx = points[1] - points[0]
        assert quadrature_kld(density, density, dx) == pytest.approx(0.0, abs=1e-12)
        assert quadrature_tvd(density, density, dx) == 0.0


def test_density_curves(mixture, kld_fit, tvd_fit):
    curves = density_curves(mixture, GRID, kld_fit, tvd_fit)
    assert len(curves) == GRID.points
    assert all(len(row) == len(CURVE_HEADER) for row in curves)
    x, p, kld, tvd = curves[400]
    assert p == pytest.approx(float(mixture.density(np.array([x]))[0]))
    assert kld == pytest.approx(float(kld_fit.density(np.array([x]))[0]))
