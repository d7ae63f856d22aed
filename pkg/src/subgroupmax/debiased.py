"""De-sparsified Lasso for the subgroup block and its wild bootstrap."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _cd
from ._random import child_rng, draw_multipliers
from .data import DataSet
from .errors import ConvergenceError, DataError, NumericalError
from .lasso import (DEFAULT_MAX_SWEEPS, DEFAULT_TOL, FoldSet, GramData, LassoFit, cv_column,
                    lambda_max_gram, make_folds, make_grid, solve_gram)

MAX_RETRIES = 3


@dataclass
class NodewiseProjection:
    """Residualized subgroup columns ``V`` and the scaled directions ``Ztilde = V / (V'Z)``."""

    Ztilde: np.ndarray
    V: np.ndarray
    zeta_hat: np.ndarray
    lambda_node: np.ndarray

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.Ztilde).tobytes()).hexdigest()


@dataclass
class DebiasedEstimate:
    b_hat: np.ndarray
    se: np.ndarray
    sigma_eps2: float
    source_fit: LassoFit
    projection: NodewiseProjection

    @property
    def beta_lasso(self) -> np.ndarray:
        return self.source_fit.beta_hat


def default_weights(gd: GramData) -> np.ndarray:
    """Column standard deviations: penalizing ``sd_j |theta_j|`` matches fitting on standardized columns."""
    return np.where(gd.sd > 0, gd.sd, 1.0)


def nodewise_residualize(data: DataSet, lambda_policy="one_se", seed=0, *, folds: int = 10,
                         gram: GramData | None = None, weights=None, fold_ids=None,
                         fold_set: FoldSet | None = None) -> NodewiseProjection:
    """Lasso-regress each subgroup column on every other design column.

    ``lambda_policy`` is ``"one_se"`` or ``"min"`` (per-column CV choice)
    or a fixed number used for every column; 0 gives exact least squares.
    """
    gd = gram if gram is not None else GramData(data.design, data.intercept)
    w = default_weights(gd) if weights is None else np.asarray(weights, dtype=float)
    p1 = data.p1
    n, p = gd.n, gd.p
    cv_needed = isinstance(lambda_policy, str)
    if cv_needed:
        if lambda_policy not in ("one_se", "min"):
            raise ValueError(f"unknown nodewise lambda policy {lambda_policy!r}")
        if fold_set is None:
            if fold_ids is None:
                fold_ids = make_folds(n, folds, seed)
            fold_set = FoldSet(gd, fold_ids)
    V = np.empty((n, p1))
    Ztilde = np.empty((n, p1))
    zeta = np.zeros((p1, p))
    lams = np.empty(p1)
    for j in range(p1):
        free = np.ones(p, dtype=np.bool_)
        free[j] = False
        c = np.ascontiguousarray(gd.G[:, j])
        if cv_needed:
            if p == 1:
                lam = 0.0
            else:
                lmax = lambda_max_gram(gd.G, c, w, free=free)
                cv = cv_column(fold_set, j, make_grid(lmax, n=n, p=p - 1).values, w)
                lam = cv.lambda_1se if lambda_policy == "one_se" else cv.lambda_min
        else:
            lam = float(lambda_policy)
        theta, _, ok = solve_gram(gd.G, c, lam, w, free=free, yy=float(gd.G[j, j]))
        if not ok:
            raise ConvergenceError(f"nodewise regression for column {j} did not converge")
        v = gd.Xc[:, j] - gd.Xc @ theta
        denom = float(v @ gd.X[:, j])
        scale = max(1.0, float(gd.Xc[:, j] @ gd.Xc[:, j]))
        if denom <= 1e-12 * scale or float(v @ v) / n <= 0.0:
            raise NumericalError(
                f"degenerate nodewise projection for subgroup column {j} "
                f"({data.names[j]}): it is (nearly) collinear with the other columns")
        V[:, j] = v
        Ztilde[:, j] = v / denom
        zeta[j] = theta
        lams[j] = lam
    return NodewiseProjection(Ztilde, V, zeta, lams)


def estimate_noise(residuals, df_proxy: int = 0) -> float:
    """Residual variance ``||r||^2 / (n - df_proxy)``."""
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    if not 0 <= df_proxy < n:
        raise ValueError(f"need 0 <= df_proxy < n, got df_proxy={df_proxy}, n={n}")
    return float(r @ r) / (n - df_proxy)


def debias(fit: LassoFit, proj: NodewiseProjection, data: DataSet) -> DebiasedEstimate:
    """One-step correction ``b_j = beta_j + Ztilde_j' residuals``; se is ``sigma * ||Ztilde_j||``."""
    if proj.Ztilde.shape != (data.n, data.p1) or fit.coef.shape[0] != data.p or fit.p1 != data.p1:
        raise DataError("fit, projection and data dimensions disagree")
    b = fit.beta_hat + proj.Ztilde.T @ fit.residuals
    df = min(int(fit.active_set.size), data.n - 1)
    sigma2 = estimate_noise(fit.residuals, df)
    se = np.sqrt(sigma2) * np.linalg.norm(proj.Ztilde, axis=0)
    return DebiasedEstimate(b, se, sigma2, fit, proj)


def _solve_block(G, C, lam, w, theta0, tol, idx):
    free = np.ones(G.shape[0], dtype=np.bool_)
    return _cd.cd_batch(G, np.ascontiguousarray(C[:, idx]), lam, w, free, theta0, tol, DEFAULT_MAX_SWEEPS)


def wild_bootstrap_debiased(fit: LassoFit, proj: NodewiseProjection, data: DataSet, B: int,
                            multiplier: str = "rademacher", seed=0, *, gram: GramData | None = None,
                            workers: int = 1, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``B x p1`` replicates of the debiased estimator.

    Each replicate perturbs the Lasso residuals by independent multipliers,
    refits the Lasso at the original penalty (warm-started at ``fit``) and
    re-applies the one-step correction with the same projection. Replicate
    ``b`` draws from its own stream derived from ``(seed, b)``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    gd = gram if gram is not None else GramData(data.design, data.intercept)
    n = gd.n
    eps = fit.residuals
    theta_hat = fit.coef
    w = fit.weights
    rngs = [child_rng(seed, b) for b in range(B)]
    U = np.empty((n, B))
    for b in range(B):
        U[:, b] = draw_multipliers(rngs[b], n, multiplier)
    M = proj.Ztilde.T @ gd.Xc
    yy = float(np.var(data.y)) if data.intercept else float(data.y @ data.y / n)
    tol_abs = tol * (np.sqrt(yy) if yy > 0 else 1.0)
    base = gd.G @ theta_hat

    def solve(Umat):
        E = Umat * eps[:, None]
        C = base[:, None] + gd.Xc.T @ E / n
        chunks = np.array_split(np.arange(Umat.shape[1]), max(1, min(workers, Umat.shape[1])))
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda idx: _solve_block(gd.G, C, fit.lam, w, theta_hat, tol_abs, idx),
                                      chunks))
        else:
            parts = [_solve_block(gd.G, C, fit.lam, w, theta_hat, tol_abs, chunks[0])]
        thetas = np.vstack([p[0] for p in parts])
        conv = np.concatenate([p[1] for p in parts])
        reps = thetas[:, : data.p1] + (theta_hat - thetas) @ M.T + (proj.Ztilde.T @ E).T
        return reps, conv

    reps, conv = solve(U)
    for attempt in range(MAX_RETRIES):
        bad = np.flatnonzero(~conv)
        if bad.size == 0:
            break
        Ub = np.column_stack([draw_multipliers(rngs[b], n, multiplier) for b in bad])
        new, ok = solve(Ub)
        reps[bad] = new
        conv[bad] = ok
    if not conv.all():
        raise ConvergenceError(f"{int((~conv).sum())} bootstrap replicates failed to converge "
                               f"after {MAX_RETRIES} retries")
    return reps
