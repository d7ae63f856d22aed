"""Repeated data splitting (R-Split): select on one half, refit OLS on the other, average.

Every split refits ``y`` on ``(1, Z, X_M)`` over the second half, so the
intercept is profiled out by centering each half. The linear expansion
matrix ``Gamma`` is therefore built from centered second-half Gram matrices
and the fast bootstrap uses the centered full-sample design.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from ._random import child_rng, draw_multipliers
from .data import DataSet
from .errors import ConfigError, DataError, NumericalError
from .lasso import (DEFAULT_MAX_SWEEPS, GramData, lambda_max_gram, make_folds, make_grid,
                    FoldSet, cv_response)

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
SELECT_TOL = 1e-6


@dataclass(frozen=True)
class SelectorConfig:
    """Model selection on the first half.

    ``mode="global"`` chooses the penalty once by cross-validation on the full
    sample and rescales it by ``sqrt(n / n1)`` for each half; ``mode="cv"``
    cross-validates inside every split (much slower); ``mode="fixed"`` uses
    ``lam`` as given. The selected size is pushed into ``[s_min, s_max]`` by
    lowering the penalty or truncating by standardized magnitude.
    ``s_max=None`` means ``n2 // 4``.
    """

    mode: str = "global"
    rule: str = "min"
    s_min: int = 3
    s_max: int | None = None
    folds: int = 10
    lam: float | None = None

    def __post_init__(self):
        if self.mode not in ("global", "cv", "fixed"):
            raise ConfigError(f"unknown selector mode {self.mode!r}")
        if self.rule not in ("min", "one_se"):
            raise ConfigError(f"unknown selector rule {self.rule!r}")
        if self.mode == "fixed" and (self.lam is None or self.lam < 0):
            raise ConfigError("fixed selector needs a nonnegative lam")
        if self.s_min < 0 or (self.s_max is not None and self.s_max < self.s_min):
            raise ConfigError(f"invalid model-size bounds [{self.s_min}, {self.s_max}]")


@dataclass
class SplitRecord:
    split_id: int
    T1: np.ndarray
    T2: np.ndarray
    selected_model: np.ndarray
    b_tilde: np.ndarray
    gamma_tilde: np.ndarray
    Gamma: np.ndarray = field(repr=False)

    @property
    def v(self) -> np.ndarray:
        n = self.T1.size + self.T2.size
        out = np.zeros(n)
        out[self.T2] = 1.0
        return out


@dataclass
class RSplitEstimate:
    b_tilde: np.ndarray
    Gamma_tilde: np.ndarray
    residuals_for_boot: np.ndarray
    se: np.ndarray
    kept_splits: int
    discarded_splits: int
    model_sizes: np.ndarray = field(repr=False, default=None)
    selection_lambda: float = float("nan")
    records: list = field(repr=False, default=None)


def _split(n: int, n1: int, rng) -> tuple:
    perm = rng.permutation(n)
    return np.sort(perm[:n1]), np.sort(perm[n1:])


def _select_model(Xs, ys, lam, w, p1, s_min, s_max):
    """Lasso support (covariate indices) on centered first-half data, size in [s_min, s_max]."""
    n = Xs.shape[0]
    colsq = np.einsum("ij,ij->j", Xs, Xs) / n
    theta = np.zeros(Xs.shape[1])
    tol = SELECT_TOL * max(float(np.sqrt(ys @ ys / n)), 1e-300)
    ok = True
    for _ in range(80):
        _, conv = _cd.cd_naive(Xs, ys, lam, w, theta, colsq, tol, DEFAULT_MAX_SWEEPS)
        ok = ok and conv
        support = np.flatnonzero(theta[p1:])
        if support.size >= s_min:
            break
        lam *= 0.8
    if not ok:
        raise NumericalError("selection Lasso did not converge")
    if support.size < s_min:
        # penalty walked to ~0 and still too small: pad by standardized correlation
        score = np.abs(Xs[:, p1:].T @ (ys - Xs @ theta)) / np.sqrt(np.maximum(colsq[p1:], 1e-300))
        score[support] = np.inf
        support = np.sort(np.argsort(-score, kind="stable")[:s_min])
    if support.size > s_max:
        mag = np.abs(theta[p1:][support]) * np.sqrt(colsq[p1:][support])
        support = np.sort(support[np.argsort(-mag, kind="stable")[:s_max]])
    return support


def _refit(Z2, X2, y2, model, p1, p):
    """OLS of y on (1, Z, X_M) over the second half. Returns (b, gamma, Gamma_row_block) or None."""
    W = np.hstack([Z2, X2[:, model]])
    W = W - W.mean(axis=0)
    yc = y2 - y2.mean()
    n2 = W.shape[0]
    S = W.T @ W / n2
    evals, evecs = np.linalg.eigh(S)
    if evals[0] <= RANK_TOL * max(evals[-1], 1e-300):
        return None
    Sinv = (evecs / evals) @ evecs.T
    coef = Sinv @ (W.T @ yc) / n2
    Gamma = np.zeros((p1, p))
    Gamma[:, :p1] = Sinv[:p1, :p1]
    Gamma[:, p1 + model] = Sinv[:p1, p1:]
    return coef[:p1], coef[p1:], Gamma


def _selection_lambda(data: DataSet, gd: GramData, w, selector: SelectorConfig, n1: int, seed) -> float:
    if selector.mode == "fixed":
        return float(selector.lam)
    c, _, _ = gd.moments(data.y)
    grid = make_grid(lambda_max_gram(gd.G, c, w), n=gd.n, p=gd.p).values
    fs = FoldSet(gd, make_folds(gd.n, selector.folds, seed))
    cv = cv_response(fs, data.y, grid, w)
    lam = cv.lambda_min if selector.rule == "min" else cv.lambda_1se
    return lam * np.sqrt(gd.n / n1)


def _split_lambda_cv(Xs, ys, w, selector, seed) -> float:
    """Per-split CV choice on the first half."""
    gd = GramData(Xs, True)
    c, _, _ = gd.moments(ys)
    grid = make_grid(lambda_max_gram(gd.G, c, w), n=gd.n, p=gd.p).values
    fs = FoldSet(gd, make_folds(gd.n, selector.folds, seed))
    cv = cv_response(fs, ys, grid, w)
    return cv.lambda_min if selector.rule == "min" else cv.lambda_1se


def _record_key(rec: SplitRecord) -> bytes:
    return rec.T1.astype(np.int64).tobytes()


def aggregate_splits(records, p1: int, p: int):
    """Average refits in a canonical order so the result ignores split ordering."""
    if not records:
        raise NumericalError("no splits to aggregate")
    ordered = sorted(records, key=_record_key)
    b = np.zeros(p1)
    G = np.zeros((p1, p))
    for rec in ordered:
        b += rec.b_tilde
        G += rec.Gamma
    return b / len(ordered), G / len(ordered)


def linear_form_cov(Gamma, design_c, residuals) -> np.ndarray:
    """Covariance of ``Gamma (1/n) sum_i w_i u_i e_i`` under unit-variance multipliers."""
    n = design_c.shape[0]
    A = Gamma @ (design_c.T * residuals) / n
    return A @ A.T


def rsplit_estimate(data: DataSet, B1: int = 1000, split_fraction: float = 0.5,
                    selector: SelectorConfig | None = None, seed=0, *, residuals=None,
                    gram: GramData | None = None, keep_records: bool = False,
                    max_discard_fraction: float = 0.5) -> RSplitEstimate:
    """Smoothed R-Split estimate of the subgroup coefficients.

    ``residuals`` (length n) feed the bootstrap and the standard errors;
    they usually come from the full-sample Lasso fit. When omitted the
    standard errors are left as NaN.
    """
    selector = selector or SelectorConfig()
    if B1 < 1:
        raise ConfigError("B1 must be at least 1")
    if not 0.0 < split_fraction < 1.0:
        raise ConfigError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    n, p1, p = data.n, data.p1, data.p
    n1 = int(round(split_fraction * n))
    n2 = n - n1
    if n1 < 2 or n2 < 2:
        raise ConfigError(f"split_fraction {split_fraction} leaves an empty half (n1={n1}, n2={n2})")
    s_max = selector.s_max if selector.s_max is not None else max(selector.s_min, n2 // 4)
    s_max = min(s_max, data.p2)
    if selector.s_min > data.p2:
        raise ConfigError(f"s_min={selector.s_min} exceeds the number of covariates {data.p2}")
    if n2 <= p1 + s_max:
        raise ConfigError(f"second half too small: n2={n2} must exceed p1 + s_max = {p1 + s_max}")
    if p1 > 25:
        warnings.warn(f"R-Split with p1={p1} subgroups; the method targets a small fixed number",
                      stacklevel=2)
    gd = gram if gram is not None else GramData(data.design, data.intercept)
    w = np.concatenate([np.zeros(p1), np.where(gd.sd[p1:] > 0, gd.sd[p1:], 1.0)])
    lam0 = None if selector.mode == "cv" else _selection_lambda(data, gd, w, selector, n1, seed)

    design = data.design
    records = []
    discarded = 0
    for b in range(B1):
        rng = child_rng(seed, 1, b)
        T1, T2 = _split(n, n1, rng)
        D1 = design[T1]
        Xs = D1 - D1.mean(axis=0)
        ys = data.y[T1] - data.y[T1].mean()
        try:
            lam = lam0 if lam0 is not None else _split_lambda_cv(Xs, ys, w, selector, rng.integers(2**31))
            model = _select_model(Xs, ys, lam, w, p1, selector.s_min, s_max)
        except NumericalError as exc:
            log.info("split %d discarded: %s", b, exc)
            discarded += 1
            continue
        fit = _refit(data.Z[T2], data.X[T2], data.y[T2], model, p1, p)
        if fit is None:
            log.info("split %d discarded: singular refit design", b)
            discarded += 1
            continue
        records.append(SplitRecord(b, T1, T2, model, fit[0], fit[1], fit[2]))
    if not records:
        raise NumericalError(f"all {B1} splits were discarded (singular refits or selection failures)")
    if discarded > max_discard_fraction * B1:
        raise NumericalError(f"{discarded} of {B1} splits discarded; refit designs are unstable")
    b_tilde, Gamma = aggregate_splits(records, p1, p)
    if residuals is None:
        res = np.zeros(n)
        se = np.full(p1, np.nan)
    else:
        res = np.asarray(residuals, dtype=float)
        if res.shape != (n,):
            raise DataError(f"residuals must have length {n}")
        se = np.sqrt(np.diag(linear_form_cov(Gamma, gd.Xc, res)))
    sizes = np.array([r.selected_model.size for r in records])
    return RSplitEstimate(b_tilde, Gamma, res, se, len(records), discarded, sizes,
                          float("nan") if lam0 is None else float(lam0),
                          records if keep_records else None)


def rsplit_bootstrap(est: RSplitEstimate, data: DataSet, B2: int, multiplier: str = "rademacher",
                     seed=0, *, gram: GramData | None = None) -> np.ndarray:
    """``B2 x p1`` replicates ``b + Gamma (1/n) sum_i w_i u_i e_i`` (no refitting)."""
    if B2 < 1:
        raise ConfigError("B2 must be at least 1")
    p1, p = est.Gamma_tilde.shape
    if p1 != data.p1 or p != data.p or est.residuals_for_boot.shape[0] != data.n:
        raise DataError("estimate and data dimensions disagree")
    gd = gram if gram is not None else GramData(data.design, data.intercept)
    n = data.n
    U = np.empty((n, B2))
    for b in range(B2):
        U[:, b] = draw_multipliers(child_rng(seed, b), n, multiplier)
    E = U * est.residuals_for_boot[:, None]
    return est.b_tilde + (est.Gamma_tilde @ (gd.Xc.T @ E) / n).T


def fit_diagnostics(split: SplitRecord, data: DataSet, beta, gamma) -> dict:
    """Over- and under-fitting parts of the split's refit error (simulation use).

    With true ``beta`` and ``gamma`` the second-half refit satisfies
    ``sqrt(n2) (b_split - beta) = overfit_term + underfit_term``, where the
    first is the noise projected through the selected model and the second
    the confounding left by omitted covariates.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    T2, model = split.T2, split.selected_model
    Z = data.Z[T2] - data.Z[T2].mean(axis=0)
    X = data.X[T2] - data.X[T2].mean(axis=0)
    y = data.y[T2] - data.y[T2].mean()
    n2 = T2.size
    eps = y - Z @ beta - X @ gamma
    W = np.hstack([Z, X[:, model]])
    S = W.T @ W / n2
    if np.linalg.matrix_rank(S) < W.shape[1]:
        raise NumericalError("singular refit design")
    over = np.linalg.solve(S, W.T @ eps / np.sqrt(n2))[: data.p1]
    XM = X[:, model]
    if model.size:
        Q, _ = np.linalg.qr(XM)
        ZR = Z - Q @ (Q.T @ Z)
    else:
        ZR = Z
    under = np.linalg.solve(ZR.T @ Z / n2, ZR.T @ (X @ gamma) / np.sqrt(n2))
    return {"overfit_term": over, "underfit_term": under}
