import logging

import numpy
import pytest
from scipy.linalg import hadamard

from emdreg.errors import ConfigError
from emdreg.lasso import (
    AllZeroCorrelation,
    CvScheme,
    DegenerateColumnWarning,
    DesignMatrix,
    LambdaRule,
    NoConvergence,
    TooFewRows,
    ZeroVarianceResponse,
    cross_validate,
    fit_cv,
    fit_path,
    gcv,
    gcv_from_rss,
    lambda_max,
    lambda_path,
    lasso_coordinate_descent,
    null_fit,
    r_squared,
    standardize,
)


def random_problem(n=120, p=8, seed=0, noise=0.5):
    rng = numpy.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 5, size=p) + rng.normal(size=p)
    beta = numpy.zeros(p)
    beta[:3] = [2.0, -1.0, 0.5]
    y = 1.0 + X @ beta + rng.normal(0, noise, n)
    return DesignMatrix(X, [f"x{j}" for j in range(p)]), y


def check_kkt(std_design, y_centered, fit, tol=1e-5):
    X = std_design.values
    residual = y_centered - X @ fit.beta_std
    gradient = X.T @ residual / len(y_centered)
    for g, b in zip(gradient, fit.beta_std):
        if b != 0:
            assert abs(g - fit.lambda_ * numpy.sign(b)) < tol
        else:
            assert abs(g) <= fit.lambda_ + tol


def test_standardize():
    design, y = random_problem()
    std_design, y_centered, info = standardize(design, y)
    numpy.testing.assert_allclose(std_design.values.mean(axis=0), 0, atol=1e-12)
    numpy.testing.assert_allclose(std_design.values.std(axis=0), 1, atol=1e-12)
    assert y_centered.mean() == pytest.approx(0, abs=1e-12)
    assert info.dropped == []


def test_standardize_drops_constant_column():
    design, y = random_problem()
    values = design.values.copy()
    values[:, 2] = 4.0
    with pytest.warns(DegenerateColumnWarning):
        std_design, y_centered, info = standardize(DesignMatrix(values, design.names), y)
    assert std_design.p == design.p - 1
    assert info.dropped == ["x2"]

    fit = lasso_coordinate_descent(std_design, y_centered, 0.01)
    assert fit.beta.shape == (design.p,)
    assert fit.beta[2] == 0


def test_standardize_too_few_rows():
    with pytest.raises(TooFewRows):
        standardize(DesignMatrix(numpy.ones((2, 1)), ["a"]), numpy.ones(2))


def test_orthonormal_design_is_soft_thresholding():
    X = hadamard(8)[:, 1:5].astype(float)
    y = numpy.random.default_rng(3).normal(size=8)
    std_design, y_centered, _ = standardize(DesignMatrix(X, list("abcd")), y)
    numpy.testing.assert_allclose(std_design.values, X)

    lam = 0.3
    fit = lasso_coordinate_descent(std_design, y_centered, lam)
    z = X.T @ y_centered / 8
    expected = numpy.sign(z) * numpy.maximum(numpy.abs(z) - lam, 0)
    numpy.testing.assert_allclose(fit.beta_std, expected, atol=1e-6)


def test_zero_lambda_is_least_squares():
    design, y = random_problem(p=5)
    std_design, y_centered, info = standardize(design, y)
    fit = lasso_coordinate_descent(std_design, y_centered, 0.0, tol=1e-12)

    A = numpy.column_stack((numpy.ones(design.n), design.values))
    ols = numpy.linalg.lstsq(A, y, rcond=None)[0]
    assert fit.intercept == pytest.approx(ols[0], abs=1e-6)
    numpy.testing.assert_allclose(fit.beta, ols[1:], atol=1e-6)


def test_lambda_max_gives_null_model():
    design, y = random_problem()
    std_design, y_centered, _ = standardize(design, y)
    top = lambda_max(std_design, y_centered)
    for lam in (top, 2 * top):
        fit = lasso_coordinate_descent(std_design, y_centered, lam)
        assert fit.df == 0
        assert numpy.all(fit.beta == 0)
        assert fit.intercept == pytest.approx(y.mean(), abs=1e-12)


def test_kkt_and_monotone_objective():
    design, y = random_problem(p=12, seed=4)
    std_design, y_centered, _ = standardize(design, y)
    grid = lambda_path(std_design, y_centered, n_lambda=20, ratio=1e-3)
    for fit in fit_path(std_design, y_centered, grid):
        check_kkt(std_design, y_centered, fit)
        assert numpy.all(numpy.diff(fit.objective_trace) <= 1e-12)


def test_path_continuity():
    design, y = random_problem(p=6, seed=8)
    std_design, y_centered, _ = standardize(design, y)
    grid = lambda_path(std_design, y_centered, n_lambda=50)
    fits = fit_path(std_design, y_centered, grid)
    for i in range(1, len(fits)):
        step = grid[i - 1] - grid[i]
        change = numpy.sum(numpy.abs(fits[i].beta_std - fits[i - 1].beta_std))
        assert change < step * std_design.p * 10


def test_predictor_scaling_invariance():
    design, y = random_problem(seed=9)
    scaled = design.values.copy()
    scaled[:, 1] *= 250.0
    fits = []
    for values in (design.values, scaled):
        std_design, y_centered, info = standardize(DesignMatrix(values, design.names), y)
        fits.append(lasso_coordinate_descent(std_design, y_centered, 0.05, scale_info=info))
    numpy.testing.assert_allclose(fits[0].beta_std, fits[1].beta_std, atol=1e-8)
    assert fits[0].support == fits[1].support
    assert r_squared(fits[0], y) == pytest.approx(r_squared(fits[1], y), abs=1e-8)
    assert gcv(fits[0], y) == pytest.approx(gcv(fits[1], y), abs=1e-8)


def test_lambda_path():
    design, y = random_problem()
    std_design, y_centered, _ = standardize(design, y)
    grid = lambda_path(std_design, y_centered, n_lambda=100, ratio=1e-4)
    assert len(grid) == 100
    assert grid[0] == lambda_max(std_design, y_centered)
    assert numpy.all(numpy.diff(grid) < 0)
    assert grid[-1] == pytest.approx(1e-4 * grid[0])


def test_lambda_path_without_correlation():
    design, _ = random_problem()
    std_design, y_centered, _ = standardize(design, numpy.full(design.n, 3.0))
    with pytest.raises(AllZeroCorrelation):
        lambda_path(std_design, y_centered)


def test_negative_lambda():
    design, y = random_problem()
    std_design, y_centered, _ = standardize(design, y)
    with pytest.raises(ConfigError):
        lasso_coordinate_descent(std_design, y_centered, -1.0)


@pytest.mark.parametrize("scheme", [CvScheme.BLOCKS, CvScheme.RANDOM])
def test_cross_validation(scheme):
    design, y = random_problem(n=200, seed=12)
    std_design, y_centered, _ = standardize(design, y)
    grid = lambda_path(std_design, y_centered, n_lambda=30)
    result = cross_validate(design, y, grid, k=5, scheme=scheme, seed=1)
    assert len(result.cv_mean) == len(result.cv_se) == len(grid)
    assert result.lambda_1se >= result.lambda_min
    assert result.fold_errors.shape == (5, 30)

    again = cross_validate(design, y, grid, k=5, scheme=scheme, seed=1)
    numpy.testing.assert_array_equal(result.cv_mean, again.cv_mean)
    assert again.lambda_1se == result.lambda_1se


def test_cross_validation_too_few_rows():
    design, y = random_problem(n=15)
    with pytest.raises(TooFewRows):
        cross_validate(design, y, [1.0, 0.1], k=10)


def test_planted_signal_recovery():
    """y = 3 x_1 + noise among 20 decoys: the one-SE fit keeps x_1 and few decoys."""
    recovered = 0
    seeds = range(5)
    for seed in seeds:
        rng = numpy.random.default_rng(seed)
        X = rng.normal(size=(500, 21))
        y = 3 * X[:, 0] + rng.normal(0, 0.1, 500)
        selection = fit_cv(DesignMatrix(X, [f"x{j}" for j in range(21)]), y, rule=LambdaRule.ONE_SE, seed=seed)
        support = selection.fit.support
        if "x0" in support and len(support) - 1 <= 3:
            recovered += 1
        assert selection.fit is selection.fit_1se
    assert recovered == len(seeds)


def test_fit_cv_without_signal_is_null():
    design, _ = random_problem()
    selection = fit_cv(design, numpy.full(design.n, 2.0))
    assert selection.fit.df == 0
    assert selection.fit.intercept == 2.0


def test_r_squared_and_gcv():
    design, y = random_problem()
    null = null_fit(y, design.names)
    tss = numpy.sum((y - y.mean()) ** 2)
    n = len(y)
    assert r_squared(null, y) == pytest.approx(0.0, abs=1e-12)
    assert gcv(null, y) == pytest.approx((tss / n) / (1 - 1 / n) ** 2)

    std_design, y_centered, _ = standardize(design, y)
    fit = lasso_coordinate_descent(std_design, y_centered, 0.01)
    assert gcv(fit, y) >= fit.rss / n


def test_gcv_arithmetic():
    assert gcv_from_rss(50.0, 100, 5) == pytest.approx(0.5 / 0.95**2)
    assert gcv_from_rss(0.0, 100, 5) == 0.0
    assert gcv_from_rss(1.0, 10, 10) == float("inf")


def test_perfect_fit():
    x = numpy.arange(20.0)
    y = 2 * x + 1
    std_design, y_centered, _ = standardize(DesignMatrix(x, ["x"]), y)
    fit = lasso_coordinate_descent(std_design, y_centered, 0.0, tol=1e-14)
    assert r_squared(fit, y) == pytest.approx(1.0)
    assert gcv(fit, y) == pytest.approx(0.0, abs=1e-12)


def test_zero_variance_response():
    design, _ = random_problem()
    y = numpy.ones(design.n)
    with pytest.raises(ZeroVarianceResponse):
        r_squared(null_fit(y, design.names), y)


def collinear_problem(n=1500, seed=0):
    """Two quadratic trends with correlation above 0.999."""
    t = numpy.arange(n) / 100.0
    a = t + 0.02 * t**2
    b = t + 0.021 * t**2
    y = a + numpy.random.default_rng(seed).normal(0, 1.0, n)
    return DesignMatrix(numpy.column_stack((a, b)), ["a", "b"]), y


def test_sweep_cap_raises_with_the_last_iterate():
    design, y = collinear_problem()
    assert numpy.corrcoef(design.values.T)[0, 1] > 0.999
    std_design, y_centered, info = standardize(design, y)
    lam = 1e-3 * lambda_max(std_design, y_centered)
    with pytest.raises(NoConvergence) as error:
        lasso_coordinate_descent(std_design, y_centered, lam, scale_info=info, max_sweeps=3)
    assert error.value.gap > 0
    assert error.value.fit.sweeps == 3
    assert numpy.all(numpy.isfinite(error.value.fit.beta))


def test_sweep_cap_keeps_the_last_iterate(caplog):
    design, y = collinear_problem()
    std_design, y_centered, info = standardize(design, y)
    lam = 1e-3 * lambda_max(std_design, y_centered)
    with pytest.raises(NoConvergence) as error:
        lasso_coordinate_descent(std_design, y_centered, lam, scale_info=info, max_sweeps=3)
    with caplog.at_level(logging.WARNING, logger="emdreg.lasso"):
        fit = lasso_coordinate_descent(std_design, y_centered, lam, scale_info=info, max_sweeps=3, strict=False)
    numpy.testing.assert_array_equal(fit.beta, error.value.fit.beta)
    assert "did not converge" in caplog.text


def test_path_survives_the_sweep_cap(caplog):
    design, y = collinear_problem()
    std_design, y_centered, info = standardize(design, y)
    grid = lambda_path(std_design, y_centered, n_lambda=10)
    with caplog.at_level(logging.WARNING, logger="emdreg.lasso"):
        fits = fit_path(std_design, y_centered, grid, scale_info=info, max_sweeps=3)
    assert len(fits) == len(grid)
    assert "keeping the last iterate" in caplog.text
    assert all(numpy.all(numpy.isfinite(fit.beta)) for fit in fits)


def test_cross_validation_on_collinear_columns():
    design, y = collinear_problem()
    selection = fit_cv(design, y, rule=LambdaRule.ONE_SE, k=5, n_lambda=20)
    assert selection.cv.cv_mean.shape == (20,)
    assert numpy.all(numpy.isfinite(selection.fit.beta))
    assert selection.fit.df >= 1
