import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from extremal_design.domain import SpatialGrid
from extremal_design.fit import (FitError, GpdFit, empirical_extremogram, fit_location_covariate,
                                 fit_scale_shape_pooled, fit_variogram_to_extremogram, gpd_fit_mle, gpd_loglik,
                                 gpd_quantile, gpd_sample, gpd_score, gpd_survival, model_extremogram,
                                 pooled_loglik, qq_plot_data)
from extremal_design.simulate import make_rng
from extremal_design.variogram import Family, VariogramModel, extremogram_from_variogram

# arbitrary-precision value of (1 + 0.33 * 5 / 1.87) ** (-1 / 0.33)
SURVIVAL_ORACLE = 0.1470864122473338


def test_gpd_survival_examples():
    assert gpd_survival(1.0, 1.0, 0.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert gpd_survival(4.0, 2.0, -0.5) == 0.0
    assert gpd_survival(5.0, 2.0, -0.5) == 0.0
    oracle = float((1 + mp.mpf("0.33") * 5 / mp.mpf("1.87")) ** (-1 / mp.mpf("0.33")))
    assert oracle == pytest.approx(SURVIVAL_ORACLE, abs=1e-15)
    assert gpd_survival(5.0, 1.87, 0.33) == pytest.approx(SURVIVAL_ORACLE, abs=1e-14)
    with pytest.raises(ValueError):
        gpd_survival(1.0, 0.0, 0.1)


@given(st.floats(0.01, 0.99), st.floats(0.1, 10), st.floats(-0.45, 1.9))
def test_survival_quantile_identity(p, sigma, xi):
    assert gpd_survival(gpd_quantile(p, sigma, xi), sigma, xi) == pytest.approx(1 - p, abs=1e-10)


def test_mle_recovers_truth():
    x = gpd_sample(make_rng(7), 5000, 1.87, 0.33)
    f = gpd_fit_mle(x)
    assert abs(f.sigma_hat - 1.87) < 3 * f.standard_errors[0]
    assert abs(f.xi_hat - 0.33) < 3 * f.standard_errors[1]
    if f.xi_hat < 0:
        assert np.all(x < -f.sigma_hat / f.xi_hat)


def test_mle_exponential_sample():
    x = make_rng(3).exponential(2.0, 4000)
    f = gpd_fit_mle(x)
    assert abs(f.xi_hat) < 3 * f.standard_errors[1]


def test_mle_gradient_vanishes_at_optimum():
    x = gpd_sample(make_rng(11), 3000, 1.2, 0.2)
    f = gpd_fit_mle(x)
    eps = 1e-6
    ll = lambda s, k: gpd_loglik(x, s, k)
    g = np.array([(ll(f.sigma_hat + eps, f.xi_hat) - ll(f.sigma_hat - eps, f.xi_hat)) / (2 * eps),
                  (ll(f.sigma_hat, f.xi_hat + eps) - ll(f.sigma_hat, f.xi_hat - eps)) / (2 * eps)])
    assert np.linalg.norm(g) < 1e-4 * (1 + abs(f.loglik))


@given(st.floats(0.3, 5), st.floats(-0.3, 1.5))
def test_analytic_score_matches_finite_difference(sigma, xi):
    x = gpd_sample(make_rng(1), 200, 1.0, 0.3)
    if xi < 0:
        x = x[x < -0.9 * sigma / xi]
    eps = 1e-6
    fd = [(gpd_loglik(x, sigma + eps, xi) - gpd_loglik(x, sigma - eps, xi)) / (2 * eps),
          (gpd_loglik(x, sigma, xi + eps) - gpd_loglik(x, sigma, xi - eps)) / (2 * eps)]
    np.testing.assert_allclose(gpd_score(x, sigma, xi), fd, rtol=1e-4, atol=1e-4)


def test_mle_errors():
    with pytest.raises(FitError, match="degenerate"):
        gpd_fit_mle(np.full(50, 2.0))
    with pytest.raises(FitError):
        gpd_fit_mle(np.ones(10))


def test_location_covariate_examples():
    x = np.array([0.1, 0.5, 0.9, 1.3, 2.0])
    f = fit_location_covariate(2 + 3 * x, x)
    assert f.b1 == pytest.approx(2.0, abs=1e-10)
    assert f.b2 == pytest.approx(3.0, abs=1e-10)
    assert max(f.standard_errors) < 1e-8
    with pytest.raises(FitError):
        fit_location_covariate([1.0, 2.0], [0.0, 1.0])
    with pytest.raises(FitError, match="zero variance"):
        fit_location_covariate([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])


def test_location_covariate_noisy_recovery():
    rng = make_rng(2)
    y = rng.uniform(0.05, 0.15, 14)
    q = 1.14 + 20.8 * y + rng.normal(0, 0.3, 14)
    f = fit_location_covariate(q, y)
    assert abs(f.b2 - 20.8) < 3 * f.standard_errors[1]
    assert abs(f.b1 - 1.14) < 3 * f.standard_errors[0]


def test_pooled_single_station_equals_mle():
    x = gpd_sample(make_rng(5), 800, 1.87, 0.33)
    single = gpd_fit_mle(x)
    pooled = fit_scale_shape_pooled([x])
    assert pooled.a_hat == pytest.approx(single.sigma_hat, abs=1e-8)
    assert pooled.xi_hat == pytest.approx(single.xi_hat, abs=1e-8)
    assert pooled_loglik([x], 1.5, 0.2) == pytest.approx(gpd_loglik(x, 1.5, 0.2), abs=1e-10)


def test_pooled_recovery_on_14_stations():
    rng = make_rng(9)
    sets = [gpd_sample(rng, n, 1.87, 0.33) for n in rng.integers(150, 320, 14)]
    f = fit_scale_shape_pooled(sets)
    assert 2500 < f.n_exceedances < 4500
    assert abs(f.a_hat - 1.87) < 3 * f.standard_errors[0]
    assert abs(f.xi_hat - 0.33) < 3 * f.standard_errors[1]
    with pytest.raises(FitError):
        fit_scale_shape_pooled([np.ones(20) + np.arange(20)])


@pytest.fixture
def raster():
    return SpatialGrid.regular_2d(8, 8, 1.0)


def test_extremogram_perfect_dependence(raster):
    stack = np.ones((50, raster.n))
    emp = empirical_extremogram(stack, raster, q=0.9)
    fin = ~np.isnan(emp.rho_hat)
    assert np.all(emp.rho_hat[fin] == 1.0)


def test_extremogram_independent_noise():
    grid = SpatialGrid.regular_2d(12, 12, 1.0)
    stack = make_rng(4).random((20_000, grid.n))
    emp = empirical_extremogram(stack, grid, q=0.995, sectors=1)
    far = emp.mean_lag[:, 0] > 4
    assert abs(np.nanmean(emp.rho_hat[far, 0]) - 0.005) < 0.002
    assert np.all((emp.rho_hat[~np.isnan(emp.rho_hat)] >= 0) & (emp.rho_hat[~np.isnan(emp.rho_hat)] <= 1))


def test_extremogram_symmetric_under_reflection(raster):
    stack = make_rng(1).standard_normal((400, raster.n))
    a = empirical_extremogram(stack, raster, q=0.95, sectors=1)
    mirrored = SpatialGrid(-raster.locations, raster.cell_spacing)
    b = empirical_extremogram(stack, mirrored, q=0.95, sectors=1)
    np.testing.assert_array_equal(a.rho_hat, b.rho_hat)
    np.testing.assert_array_equal(a.pair_counts, b.pair_counts)


def test_extremogram_flags_sparse_bins(raster):
    emp = empirical_extremogram(make_rng(0).random((200, raster.n)), raster, q=0.9, min_pairs=10)
    assert np.all(~emp.reliable[emp.pair_counts < 10])
    with pytest.raises(ValueError):
        empirical_extremogram(np.ones((1, raster.n)), raster)
    with pytest.raises(ValueError):
        empirical_extremogram(np.ones((5, raster.n)), raster, q=0.4)


def _exact_extremogram(model, grid):
    emp = empirical_extremogram(make_rng(0).random((50, grid.n)), grid, q=0.9)
    emp.rho_hat[:] = model_extremogram(model, emp.lag_vectors)
    emp.reliable[:] = emp.pair_counts > 0
    return emp


def test_variogram_fit_noiseless_recovery():
    grid = SpatialGrid.regular_2d(12, 12, 1.0)
    truth = VariogramModel.stable_fractal(1.2, 0.8, 6.0, kappa=1.5, delta=0.3)
    fit = fit_variogram_to_extremogram(_exact_extremogram(truth, grid))
    m = fit.model
    for est, true in ((m.alpha, 1.2), (m.lam, 6.0), (m.beta, 0.8)):
        assert est == pytest.approx(true, rel=1e-3)


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_variogram_fit_noisy_and_isotropic(seed):
    grid = SpatialGrid.regular_2d(20, 20, 1.0)
    truth = VariogramModel.stable_fractal(1.0, 0.5, 5.0)
    emp = _exact_extremogram(truth, grid)
    noise = make_rng(seed).uniform(-0.02, 0.02, emp.rho_hat.shape)
    emp.rho_hat[:] = np.clip(emp.rho_hat + noise, 1e-6, 1.0)
    m = fit_variogram_to_extremogram(emp).model
    assert m.alpha == pytest.approx(1.0, rel=0.1)
    assert m.lam == pytest.approx(5.0, rel=0.1)
    assert m.anisotropy.kappa == pytest.approx(1.0, rel=0.1)


def test_variogram_fit_needs_cells(raster):
    emp = empirical_extremogram(make_rng(0).random((50, raster.n)), raster, q=0.9)
    emp.reliable[:] = False
    emp.reliable[0, 0] = True
    with pytest.raises(FitError):
        fit_variogram_to_extremogram(emp, Family.POWER)


def test_qq_plot_data():
    rng = make_rng(6)
    x = gpd_sample(rng, 300, 1.87, 0.33)
    f = gpd_fit_mle(x)
    qq = qq_plot_data(f, x, n_boot=200, seed=1)
    assert qq.shape == (300, 4)
    assert np.all(np.diff(qq[:, 1]) >= 0)
    inside = np.mean((qq[:, 0] >= qq[:, 2]) & (qq[:, 0] <= qq[:, 3]))
    assert 0.9 <= inside <= 1.0
    with pytest.raises(ValueError):
        qq_plot_data(f, x, n_boot=0)


@given(arrays(float, st.integers(2, 8), elements=st.floats(0.0, 50.0)))
def test_gpd_fit_small_samples_never_overflow(x):
    try:
        f = gpd_fit_mle(x, min_n=2)
    except FitError:
        return
    assert math.isfinite(f.sigma_hat) and f.sigma_hat > 0
