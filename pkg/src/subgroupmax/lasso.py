"""Weighted Lasso by cyclic coordinate descent, lambda grids and K-fold CV.

The objective is ``(1/2n)||y - b0 - X theta||^2 + lam * sum_j w_j |theta_j|``
with an unpenalized intercept ``b0`` (profiled out by centering) unless
``intercept=False``. A zero weight leaves the coordinate unpenalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .errors import ConvergenceError, DataError

DEFAULT_TOL = 1e-7
# CV paths only rank lambdas; glmnet's default threshold is looser still
PATH_TOL = 1e-5
DEFAULT_MAX_SWEEPS = 20_000
LAMBDA_MODES = ("min", "one_se", "one_se_x1.1", "lambda0", "fixed")


class GramData:
    """Centered design moments shared by every fit on the same design.

    ``G = Xc'Xc / n`` with ``Xc`` the column-centered design (raw design
    when ``intercept`` is false).
    """

    def __init__(self, design, intercept: bool = True):
        X = np.ascontiguousarray(design, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("design must be a 2-d array")
        self.X = X
        self.n, self.p = X.shape
        self.intercept = intercept
        self.means = X.mean(axis=0) if intercept else np.zeros(self.p)
        self.Xc = X - self.means
        G = self.Xc.T @ self.Xc / self.n
        self.G = np.ascontiguousarray((G + G.T) / 2.0)
        self.sd = np.sqrt(np.clip(np.diag(self.G), 0.0, None))

    def moments(self, y):
        """Return ``(c, ybar, yy)`` for response ``y``."""
        y = np.asarray(y, dtype=np.float64)
        ybar = float(y.mean()) if self.intercept else 0.0
        yc = y - ybar
        return self.Xc.T @ yc / self.n, ybar, float(yc @ yc) / self.n


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    weights: np.ndarray
    residuals: np.ndarray
    active_set: np.ndarray
    kkt_violation: float
    iterations: int
    p1: int = 0
    zero_variance: tuple = ()
    converged: bool = True

    @property
    def beta_hat(self) -> np.ndarray:
        return self.coef[: self.p1]

    @property
    def gamma_hat(self) -> np.ndarray:
        return self.coef[self.p1:]

    def objective(self) -> float:
        n = self.residuals.shape[0]
        return float(self.residuals @ self.residuals / (2 * n) + self.lam * np.abs(self.weights * self.coef).sum())


@dataclass
class LambdaGrid:
    values: np.ndarray
    selection: str = "min"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("lambda grid must be a non-empty 1-d sequence")
        if np.any(v < 0) or np.any(np.diff(v) >= 0):
            raise ValueError("lambda grid must be strictly descending and nonnegative")
        self.values = v


@dataclass
class CVResult:
    lambda_min: float
    lambda_1se: float
    grid: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    fold_ids: np.ndarray = field(repr=False, default=None)

    @property
    def index_min(self) -> int:
        return int(np.flatnonzero(self.grid == self.lambda_min)[0])


def _weights(weights, p) -> np.ndarray:
    if weights is None:
        return np.ones(p)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != p:
        raise DataError(f"penalty_weights has length {w.shape[0]}, expected {p}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("penalty weights must be finite and nonnegative")
    return w


def _free(free, p) -> np.ndarray:
    return np.ones(p, dtype=np.bool_) if free is None else np.asarray(free, dtype=np.bool_)


def solve_gram(G, c, lam, w, *, free=None, theta0=None, tol=DEFAULT_TOL, yy=1.0,
               max_sweeps=DEFAULT_MAX_SWEEPS):
    """Minimize the Gram-form objective. Returns ``(theta, sweeps, converged)``.

    ``tol`` is relative to the response scale ``sqrt(yy)``; coefficient
    changes are measured on the standardized column scale.
    """
    p = G.shape[0]
    free = _free(free, p)
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=np.float64, copy=True)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    penalized = free & (w > 0)
    if lam == 0.0 or not penalized.any():
        # exact least squares on the free coordinates (min-norm if singular)
        idx = np.flatnonzero(free & (np.diag(G) > 0))
        if idx.size:
            rhs = c[idx] - G[np.ix_(idx, ~free)] @ theta[~free] if (~free).any() else c[idx]
            theta[idx] = np.linalg.lstsq(G[np.ix_(idx, idx)], rhs, rcond=None)[0]
        return theta, 1, True
    scale = np.sqrt(yy) if yy > 0 else 1.0
    sweeps, ok, _ = _cd.cd_solve(G, np.ascontiguousarray(c), float(lam), w, free, theta,
                                 tol * scale, max_sweeps)
    return theta, int(sweeps), bool(ok)


def kkt_violation(G, c, lam, w, theta, *, free=None, yy=1.0) -> float:
    """Largest KKT violation on the standardized scale."""
    p = G.shape[0]
    free = _free(free, p)
    grad = G @ theta - c
    sd = np.sqrt(np.clip(np.diag(G), 0.0, None))
    thr = lam * w
    viol = np.where(theta == 0.0, np.maximum(np.abs(grad) - thr, 0.0), np.abs(grad + np.sign(theta) * thr))
    ok = free & (sd > 0)
    if not ok.any():
        return 0.0
    scale = np.sqrt(yy) if yy > 0 else 1.0
    return float(np.max(viol[ok] / sd[ok]) / scale)


def _finish_fit(gd: GramData, y, theta, lam, w, sweeps, ok, p1, yy, c, free=None) -> LassoFit:
    y = np.asarray(y, dtype=np.float64)
    ybar = float(y.mean()) if gd.intercept else 0.0
    intercept = ybar - float(gd.means @ theta) if gd.intercept else 0.0
    residuals = y - intercept - gd.X @ theta
    zero_var = tuple(int(j) for j in np.flatnonzero((gd.sd <= 0) & (w > 0)))
    return LassoFit(
        coef=theta,
        intercept=intercept,
        lam=float(lam),
        weights=w,
        residuals=residuals,
        active_set=np.flatnonzero(theta != 0.0),
        kkt_violation=kkt_violation(gd.G, c, lam, w, theta, free=free, yy=yy),
        iterations=sweeps,
        p1=p1,
        zero_variance=zero_var,
        converged=ok,
    )


def fit_gram(gd: GramData, y, lam, penalty_weights=None, *, p1=0, warm_start=None,
             tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, raise_on_fail=True) -> LassoFit:
    w = _weights(penalty_weights, gd.p)
    c, _, yy = gd.moments(y)
    theta0 = None
    if warm_start is not None:
        theta0 = warm_start.coef if isinstance(warm_start, LassoFit) else warm_start
    theta, sweeps, ok = solve_gram(gd.G, c, lam, w, theta0=theta0, tol=tol, yy=yy, max_sweeps=max_sweeps)
    fit = _finish_fit(gd, y, theta, lam, w, sweeps, ok, p1, yy, c)
    if not ok and raise_on_fail:
        raise ConvergenceError(
            f"coordinate descent did not converge in {sweeps} sweeps "
            f"(kkt violation {fit.kkt_violation:.3g})", fit.kkt_violation, sweeps)
    if fit.zero_variance:
        warnings.warn(f"zero-variance penalized columns forced to 0: {list(fit.zero_variance)}",
                      RuntimeWarning, stacklevel=2)
    return fit


def fit_lasso(design, y, lam, penalty_weights=None, *, p1=0, intercept=True, warm_start=None,
              tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS) -> LassoFit:
    """Fit the weighted Lasso at a single ``lam``.

    ``p1`` marks how many leading columns form the subgroup block (only
    used to split ``coef`` into ``beta_hat``/``gamma_hat``). ``warm_start``
    may be a previous :class:`LassoFit` or coefficient vector.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    gd = GramData(design, intercept)
    if y.shape[0] != gd.n:
        raise DataError(f"y has {y.shape[0]} rows, design has {gd.n}")
    return fit_gram(gd, y, lam, penalty_weights, p1=p1, warm_start=warm_start, tol=tol,
                    max_sweeps=max_sweeps)


def lambda_max_gram(G, c, w, *, free=None) -> float:
    p = G.shape[0]
    free = _free(free, p)
    pen = free & (w > 0)
    if not pen.any():
        raise ValueError("lambda_max needs at least one strictly positive penalty weight")
    unpen = np.flatnonzero(free & (w == 0) & (np.diag(G) > 0))
    r = c.copy()
    if unpen.size:
        theta_u = np.linalg.lstsq(G[np.ix_(unpen, unpen)], c[unpen], rcond=None)[0]
        r = c - G[:, unpen] @ theta_u
    return float(np.max(np.abs(r[pen]) / w[pen]))


def lambda_max(design, y, penalty_weights=None, *, intercept=True) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    gd = GramData(design, intercept)
    w = _weights(penalty_weights, gd.p)
    c, _, _ = gd.moments(y)
    return lambda_max_gram(gd.G, c, w)


def make_grid(lmax: float, n_lambda: int = 100, ratio: float | None = None, selection: str = "min", *,
              n: int | None = None, p: int | None = None) -> LambdaGrid:
    """Log-spaced grid from ``lmax`` down to ``ratio * lmax``.

    Without an explicit ``ratio`` the floor is 1e-3, or 1e-2 when ``n < p``
    (the near-interpolating tail is slow and never selected).
    """
    if ratio is None:
        ratio = 1e-2 if (n is not None and p is not None and n < p) else 1e-3
    if lmax <= 0:
        return LambdaGrid(np.array([0.0]), selection)
    if n_lambda == 1:
        return LambdaGrid(np.array([lmax]), selection)
    return LambdaGrid(lmax * np.logspace(0.0, np.log10(ratio), n_lambda), selection)


def path_gram(G, c, yy, lambdas, w, *, free=None, theta0=None, tol=DEFAULT_TOL,
              max_sweeps=DEFAULT_MAX_SWEEPS):
    p = G.shape[0]
    free = _free(free, p)
    theta0 = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    scale = np.sqrt(yy) if yy > 0 else 1.0
    if lambdas.size and lambdas[-1] == 0.0:
        out = np.empty((lambdas.size, p))
        head = lambdas[:-1]
        if head.size:
            out[:-1], _, _ = _cd.cd_path(G, np.ascontiguousarray(c), yy, head, w, free, theta0,
                                         tol * scale, max_sweeps)
        out[-1] = solve_gram(G, c, 0.0, w, free=free, theta0=theta0)[0]
        return out
    coefs, _, _ = _cd.cd_path(G, np.ascontiguousarray(c), yy, lambdas, w, free, theta0, tol * scale,
                              max_sweeps)
    return coefs


def lasso_path(design, y, lambdas, penalty_weights=None, *, intercept=True) -> np.ndarray:
    """Coefficient path (len(lambdas) x p) with warm starts."""
    gd = GramData(design, intercept)
    w = _weights(penalty_weights, gd.p)
    c, _, yy = gd.moments(y)
    return path_gram(gd.G, c, yy, lambdas, w)


class FoldSet:
    """Training-fold Gram matrices, built by subtracting held-out cross-products."""

    def __init__(self, gd: GramData, fold_ids):
        fold_ids = np.asarray(fold_ids)
        self.gd = gd
        self.fold_ids = fold_ids
        self.labels = np.unique(fold_ids)
        X = gd.X
        S = X.T @ X
        s = X.sum(axis=0)
        self.folds = []
        for k in self.labels:
            test = np.flatnonzero(fold_ids == k)
            train = np.flatnonzero(fold_ids != k)
            Xf = X[test]
            n_t = train.size
            s_t = s - Xf.sum(axis=0)
            mean_t = s_t / n_t if gd.intercept else np.zeros(gd.p)
            G = (S - Xf.T @ Xf) / n_t - np.outer(mean_t, mean_t)
            G = np.ascontiguousarray((G + G.T) / 2.0)
            self.folds.append((train, test, n_t, mean_t, G))

    def __len__(self):
        return len(self.folds)


def make_folds(n: int, k: int, seed) -> np.ndarray:
    """Balanced random fold labels in ``0..k-1``."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * k:
        raise DataError(f"n={n} too small for {k}-fold cross-validation (need n >= {2 * k})")
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n) % k)


def _summarize_cv(errors, sizes, grid) -> CVResult:
    w = sizes / sizes.sum()
    mean = w @ errors
    K = errors.shape[0]
    var = w @ (errors - mean) ** 2
    se = np.sqrt(var / max(K - 1, 1))
    i_min = int(np.argmin(mean))
    bound = mean[i_min] + se[i_min]
    i_1se = int(np.flatnonzero(mean <= bound)[0])
    return CVResult(float(grid[i_min]), float(grid[i_1se]), grid, mean, se)


CV_BLOCK = 5
CV_PATIENCE = 5


def _cv_core(fs: FoldSet, problems, grid, w, free, tol) -> CVResult:
    """Fold paths in lockstep over ``grid``, stopping once the curve has clearly turned up.

    ``problems`` yields, per fold, ``(G, c, yy, Xtest_centered, ytest_centered)``.
    After each block of grid values the path stops if the mean error has
    stayed above ``min + se(min)`` for ``CV_PATIENCE`` consecutive values;
    the returned curve then covers the computed prefix of the grid.
    """
    grid = np.asarray(grid, dtype=float)
    K, L = len(fs), grid.size
    errors = np.full((K, L), np.nan)
    sizes = np.array([f[1].size for f in fs.folds], dtype=float)
    wts = sizes / sizes.sum()
    thetas = [np.zeros(fs.gd.p) for _ in range(K)]
    done = 0
    while done < L:
        block = slice(done, min(done + CV_BLOCK, L))
        for i, (G, c, yy, Xt, yt) in enumerate(problems):
            coefs = path_gram(G, c, yy, grid[block], w, free=free, theta0=thetas[i], tol=tol)
            thetas[i] = coefs[-1].copy()
            errors[i, block] = np.mean((yt[:, None] - Xt @ coefs.T) ** 2, axis=0)
        done = block.stop
        mean = wts @ errors[:, :done]
        i_min = int(np.argmin(mean))
        se_min = np.sqrt(wts @ (errors[:, i_min] - mean[i_min]) ** 2 / max(K - 1, 1))
        tail = mean[-CV_PATIENCE:]
        if done - i_min > CV_PATIENCE and np.all(tail > mean[i_min] + se_min):
            break
    for i in range(K):
        if np.all(errors[i, :done] == 0.0):
            warnings.warn(f"fold {i} has zero held-out error", RuntimeWarning, stacklevel=3)
    res = _summarize_cv(errors[:, :done], sizes, grid[:done])
    res.fold_ids = fs.fold_ids
    return res


def cv_response(fs: FoldSet, y, grid, w, *, free=None, tol=PATH_TOL) -> CVResult:
    """K-fold CV error curve for regressing ``y`` on the design behind ``fs``."""
    y = np.asarray(y, dtype=np.float64)
    X = fs.gd.X
    problems = []
    for train, test, n_t, mean_t, G in fs.folds:
        yt = y[train]
        ybar = float(yt.mean()) if fs.gd.intercept else 0.0
        yc = yt - ybar
        problems.append((G, X[train].T @ yc / n_t, float(yc @ yc) / n_t, X[test] - mean_t, y[test] - ybar))
    return _cv_core(fs, problems, grid, w, free, tol)


def cv_column(fs: FoldSet, j: int, grid, w, *, tol=PATH_TOL) -> CVResult:
    """K-fold CV for regressing design column ``j`` on all other columns."""
    free = np.ones(fs.gd.p, dtype=np.bool_)
    free[j] = False
    X = fs.gd.X
    problems = [(G, np.ascontiguousarray(G[:, j]), float(G[j, j]), X[test] - mean_t, X[test, j] - mean_t[j])
                for train, test, n_t, mean_t, G in fs.folds]
    return _cv_core(fs, problems, grid, w, free, tol)


def cv_lambda(design, y, penalty_weights=None, folds: int = 10, grid=None, seed=0, *,
              intercept=True, fold_ids=None) -> CVResult:
    """K-fold cross-validation over a descending lambda grid.

    ``lambda_1se`` is the largest grid value whose mean CV error is within
    one standard error of the minimum. Folds are drawn from ``seed`` unless
    ``fold_ids`` is given.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    gd = GramData(design, intercept)
    w = _weights(penalty_weights, gd.p)
    if fold_ids is None:
        fold_ids = make_folds(gd.n, folds, seed)
    if grid is None:
        c, _, _ = gd.moments(y)
        grid = make_grid(lambda_max_gram(gd.G, c, w), n=gd.n, p=gd.p)
    values = grid.values if isinstance(grid, LambdaGrid) else np.asarray(grid, dtype=float)
    return cv_response(FoldSet(gd, fold_ids), y, values, w)


def noise_sd(residuals, df: int) -> float:
    n = residuals.shape[0]
    return float(np.sqrt(residuals @ residuals / max(n - df, 1)))


def select_lambda(gd: GramData, y, w, mode="one_se", *, fold_ids=None, folds=10, seed=0,
                  free=None, fs: FoldSet | None = None):
    """Pick the penalty level by ``mode``; returns ``(lam, cv_result_or_None)``.

    ``lambda0`` is ``sigma * sqrt(2 log p / n)`` with ``sigma`` estimated
    from a preliminary ``lambda_1se`` fit; ``one_se_x1.1`` inflates
    ``lambda_1se`` by 10%. A float ``mode`` is used as is.
    """
    if not isinstance(mode, str):
        return float(mode), None
    if mode not in LAMBDA_MODES or mode == "fixed":
        raise ValueError(f"unknown lambda mode {mode!r}")
    c, _, _ = gd.moments(y)
    grid = make_grid(lambda_max_gram(gd.G, c, w, free=free), n=gd.n, p=gd.p).values
    if fs is None:
        if fold_ids is None:
            fold_ids = make_folds(gd.n, folds, seed)
        fs = FoldSet(gd, fold_ids)
    cv = cv_response(fs, y, grid, w, free=free)
    if mode == "min":
        return cv.lambda_min, cv
    if mode == "one_se":
        return cv.lambda_1se, cv
    if mode == "one_se_x1.1":
        return 1.1 * cv.lambda_1se, cv
    pre = fit_gram(gd, y, cv.lambda_1se, w)
    sigma = noise_sd(pre.residuals, pre.active_set.size)
    return sigma * np.sqrt(2.0 * np.log(gd.p) / gd.n), cv
