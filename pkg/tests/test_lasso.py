import numpy as np
import pytest
from sklearn.linear_model import lasso_path as sk_lasso_path

from oracles import lasso_objective, lasso_proximal_gradient
from subgroupmax.errors import ConvergenceError, DataError
from subgroupmax.lasso import (FoldSet, GramData, LambdaGrid, cv_lambda, fit_lasso, lambda_max, lasso_path,
                               make_folds, make_grid, select_lambda)


def test_soft_threshold_closed_form():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    fit = fit_lasso(x[:, None], x.copy(), 0.3)
    assert fit.coef[0] == pytest.approx(0.7, abs=1e-12)


def test_zero_above_lambda_max(rng):
    X = rng.standard_normal((30, 6))
    y = X[:, 0] + rng.standard_normal(30)
    lmax = lambda_max(X, y)
    assert np.all(fit_lasso(X, y, lmax).coef == 0.0)
    assert np.any(fit_lasso(X, y, 0.9 * lmax).coef != 0.0)


def test_lambda_max_single_column():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    y = 0.4 * x
    assert lambda_max(x[:, None], y) == pytest.approx(0.4)


def test_lambda_max_orthogonal_response():
    X = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    assert lambda_max(X, np.ones(4)) == 0.0


def test_lambda_max_ignores_shift(rng):
    X = rng.standard_normal((25, 4))
    y = rng.standard_normal(25)
    assert lambda_max(X, y + 5.0) == pytest.approx(lambda_max(X, y), rel=1e-12)


def test_matches_proximal_gradient_oracle(rng):
    X = rng.standard_normal((20, 8))
    y = X @ np.array([1.0, -0.5, 0, 0, 0.3, 0, 0, 0]) + 0.5 * rng.standard_normal(20)
    w = np.ones(8)
    lam = 0.1
    fit = fit_lasso(X, y, lam, w)
    b0, coef = lasso_proximal_gradient(X, y, lam, w, iters=200_000)
    assert abs(lasso_objective(X, y, fit.intercept, fit.coef, lam, w)
               - lasso_objective(X, y, b0, coef, lam, w)) <= 1e-7
    np.testing.assert_allclose(fit.coef, coef, atol=1e-6)


def test_unpenalized_columns_match_partial_ols(rng):
    X = rng.standard_normal((40, 5))
    y = X @ np.array([2.0, 0.0, 0.0, 0.0, 0.0]) + rng.standard_normal(40)
    w = np.array([0.0, 1.0, 1.0, 1.0, 1.0])
    fit = fit_lasso(X, y, 10.0, w)
    # huge penalty: only the free column is fitted, by least squares with an intercept
    xc = X[:, 0] - X[:, 0].mean()
    assert np.all(fit.coef[1:] == 0)
    assert fit.coef[0] == pytest.approx(xc @ (y - y.mean()) / (xc @ xc), rel=1e-10)


def test_no_intercept_mode(rng):
    X = rng.standard_normal((30, 3))
    y = X @ np.array([1.0, 0.0, -1.0]) + 3.0
    fit = fit_lasso(X, y, 0.0, intercept=False)
    np.testing.assert_allclose(fit.coef, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)
    assert fit.intercept == 0.0


def test_kkt_conditions_hold_independently(rng):
    X = rng.standard_normal((50, 20))
    y = X[:, :3] @ np.array([1.0, 1.0, -1.0]) + rng.standard_normal(50)
    w = rng.uniform(0.5, 2.0, 20)
    lam = 0.05
    fit = fit_lasso(X, y, lam, w)
    grad = (X - X.mean(axis=0)).T @ fit.residuals / 50
    on = fit.coef != 0
    np.testing.assert_allclose(grad[on], lam * w[on] * np.sign(fit.coef[on]), atol=1e-6)
    assert np.all(np.abs(grad[~on]) <= lam * w[~on] + 1e-6)
    assert fit.kkt_violation <= 1e-6


def test_warm_start_reaches_same_solution(rng):
    X = rng.standard_normal((40, 10))
    y = X[:, 0] + rng.standard_normal(40)
    cold = fit_lasso(X, y, 0.05)
    warm = fit_lasso(X, y, 0.05, warm_start=fit_lasso(X, y, 0.2))
    np.testing.assert_allclose(warm.coef, cold.coef, atol=1e-7)


def test_path_matches_sklearn(rng):
    X = rng.standard_normal((60, 12))
    y = X[:, :2] @ np.array([1.5, -1.0]) + rng.standard_normal(60)
    grid = make_grid(lambda_max(X, y), 20, ratio=0.01).values
    ours = lasso_path(X, y, grid)
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    _, coefs, _ = sk_lasso_path(Xc, yc, alphas=grid, tol=1e-12, max_iter=100_000)
    np.testing.assert_allclose(ours, coefs.T, atol=1e-5)


def test_nonconvergence_raises(rng):
    X = rng.standard_normal((30, 10))
    X[:, 1] = X[:, 0] + 1e-3 * rng.standard_normal(30)
    y = X[:, 0] + rng.standard_normal(30)
    with pytest.raises(ConvergenceError):
        fit_lasso(X, y, 1e-4, max_sweeps=1)


def test_zero_variance_column_warns(rng):
    X = np.column_stack([rng.standard_normal(20), np.ones(20)])
    y = rng.standard_normal(20)
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        fit = fit_lasso(X, y, 0.01)
    assert fit.coef[1] == 0.0


def test_bad_weights_rejected(rng):
    X = rng.standard_normal((10, 3))
    with pytest.raises(DataError):
        fit_lasso(X, rng.standard_normal(10), 0.1, [1.0, -1.0, 1.0])
    with pytest.raises(DataError):
        fit_lasso(X, rng.standard_normal(10), 0.1, [1.0, 1.0])


def test_grid_shape():
    g = make_grid(2.0)
    assert g.values.size == 100
    assert g.values[0] == 2.0 and g.values[-1] == pytest.approx(0.002)
    assert make_grid(2.0, n=10, p=50).values[-1] == pytest.approx(0.02)
    with pytest.raises(ValueError):
        LambdaGrid([0.1, 0.2])


def test_cv_one_se_not_below_min(rng):
    X = rng.standard_normal((80, 15))
    y = X[:, :3] @ np.array([1.0, 0.5, -0.5]) + rng.standard_normal(80)
    cv = cv_lambda(X, y, seed=3)
    assert cv.lambda_1se >= cv.lambda_min
    assert cv.cv_mean.shape == cv.cv_se.shape == cv.grid.shape


def test_cv_single_value_grid(rng):
    X = rng.standard_normal((40, 5))
    y = rng.standard_normal(40)
    cv = cv_lambda(X, y, grid=LambdaGrid(np.array([0.1])), seed=1)
    assert cv.lambda_min == cv.lambda_1se == 0.1


def test_cv_deterministic_under_seed(rng):
    X = rng.standard_normal((50, 8))
    y = X[:, 0] + rng.standard_normal(50)
    a, b = cv_lambda(X, y, seed=9), cv_lambda(X, y, seed=9)
    assert a.lambda_min == b.lambda_min and np.array_equal(a.cv_mean, b.cv_mean)


def test_cv_duplicated_rows_same_lambda(rng):
    X = rng.standard_normal((60, 10))
    y = X[:, :2] @ np.array([1.0, -1.0]) + rng.standard_normal(60)
    folds = make_folds(60, 5, 2)
    grid = make_grid(lambda_max(X, y))
    one = cv_lambda(X, y, grid=grid, fold_ids=folds)
    two = cv_lambda(np.vstack([X, X]), np.concatenate([y, y]), grid=grid, fold_ids=np.concatenate([folds, folds]))
    assert one.lambda_min == two.lambda_min


def test_cv_pure_noise_prefers_heavy_shrinkage():
    hits = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        X = r.standard_normal((100, 50))
        y = r.standard_normal(100)
        grid = make_grid(lambda_max(X, y))
        cv = cv_lambda(X, y, grid=grid, seed=seed)
        hits += cv.lambda_min >= grid.values[24]
    assert hits >= 16


def test_fold_gram_matches_direct(rng):
    X = rng.standard_normal((30, 4))
    gd = GramData(X)
    fs = FoldSet(gd, make_folds(30, 3, 0))
    for train, _, _, _, G in fs.folds:
        Xt = X[train] - X[train].mean(axis=0)
        np.testing.assert_allclose(G, Xt.T @ Xt / train.size, atol=1e-12)


def test_select_lambda_modes(rng):
    X = rng.standard_normal((80, 20))
    y = X[:, 0] + rng.standard_normal(80)
    gd = GramData(X)
    w = np.ones(20)
    lam_1se, cv = select_lambda(gd, y, w, "one_se", seed=1)
    lam_x, _ = select_lambda(gd, y, w, "one_se_x1.1", seed=1)
    lam_min, _ = select_lambda(gd, y, w, "min", seed=1)
    lam0, _ = select_lambda(gd, y, w, "lambda0", seed=1)
    assert lam_x == pytest.approx(1.1 * lam_1se)
    assert lam_min <= lam_1se
    assert 0 < lam0 < cv.grid[0]
    assert select_lambda(gd, y, w, 0.123)[0] == 0.123
    with pytest.raises(ValueError):
        select_lambda(gd, y, w, "bogus")
