"""Cross-validated choice of the calibration exponent ``r``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._random import child_seed
from .calibration import calibration_terms, modified_max_replicates
from .data import DataSet
from .errors import ConfigError, DataError
from .pipeline import DEFAULT_CANDIDATES, InferenceConfig, estimate_and_bootstrap

R_CEILING = 0.5 - 1e-9


@dataclass
class TuningResult:
    r_cv: float
    r_star: float
    candidates: tuple
    candidate_losses: np.ndarray = field(repr=False)
    folds: int
    p1: int
    fold_h: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"r_cv": self.r_cv, "r_star": self.r_star, "candidates": list(self.candidates),
                "candidate_losses": self.candidate_losses.tolist(), "folds": self.folds, "p1": self.p1}


def calibrate_r(r_cv: float, p1: int) -> float:
    """Shrink ``r_cv`` by ``sqrt(p1 / 2)``, kept inside (0, 0.5)."""
    if p1 < 1:
        raise ValueError("p1 must be at least 1")
    if not 0.0 < r_cv < 0.5:
        raise ConfigError(f"r_cv must lie in (0, 0.5), got {r_cv}")
    return float(min(r_cv / np.sqrt(p1 / 2.0), R_CEILING))


def select_r(candidates, losses) -> float:
    """Smallest candidate minimizing ``min_i losses[l, i]``; ties go to the smaller r."""
    cands = np.asarray(candidates, dtype=float)
    order = np.argsort(cands, kind="stable")
    best = np.min(np.asarray(losses, dtype=float), axis=1)[order]
    return float(cands[order][int(np.argmin(best))])


def cross_validate_r(data: DataSet, candidates=DEFAULT_CANDIDATES, v: int = 3, pipeline: str = "debiased",
                     B_inner: int = 100, seed=0, *, config: InferenceConfig | None = None,
                     dimension: int | None = None, transform=None) -> TuningResult:
    """Pick ``r`` by v-fold cross-validation of the bias-reduced maximum.

    For each fold, the pipeline is trained on the remaining folds (with
    ``B_inner`` bootstrap draws) and its bias-reduced maximum is compared
    with each coordinate's estimate on the held-out fold:
    ``h_i = (reduced - b_i)^2 - se_i^2``. The loss of a candidate is the
    smallest fold-averaged ``h_i`` over coordinates.

    ``transform`` (a matrix) maps subgroup estimates to the reported groups
    before taking maxima; ``dimension`` overrides the count used by
    :func:`calibrate_r` (defaults to the number of maximized coordinates).
    """
    cands = tuple(sorted(float(c) for c in candidates))
    if not cands or any(not 0.0 < c < 0.5 for c in cands):
        raise ConfigError("candidates must be nonempty and lie in (0, 0.5)")
    if v < 2:
        raise ConfigError("v must be at least 2")
    n = data.n
    if v > n:
        raise ConfigError(f"v={v} exceeds the sample size {n}")
    cfg = (config or InferenceConfig()).with_(method=pipeline, r=cands[0], B_inner=B_inner)
    min_fold = 2 * cfg.cv_folds
    if n // v < min_fold or n - n // v < min_fold:
        raise DataError(f"folds of size {n // v} are too small to fit the pipeline; use fewer folds")

    perm = np.random.default_rng(child_seed(seed, 0)).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % v
    k = None
    h = None
    for j in range(v):
        train = np.flatnonzero(fold_of != j)
        ref = np.flatnonzero(fold_of == j)
        tr = estimate_and_bootstrap(data.subset(train), cfg, child_seed(seed, 1, j), B=B_inner)
        rf = estimate_and_bootstrap(data.subset(ref), cfg, child_seed(seed, 2, j), bootstrap=False)
        if transform is not None:
            tr, rf = tr.transformed(transform), rf.transformed(transform)
        if h is None:
            k = rf.estimate.shape[0]
            h = np.empty((len(cands), v, k))
        point = float(np.max(tr.estimate))
        for l, r in enumerate(cands):
            c = calibration_terms(tr.anchor, tr.n, r)
            T = modified_max_replicates(tr.replicates, c, float(np.max(tr.anchor)))
            reduced = point - float(np.mean(T))
            h[l, j] = (reduced - rf.estimate) ** 2 - rf.se ** 2
    losses = h.mean(axis=1)
    r_cv = select_r(cands, losses)
    dim = dimension if dimension is not None else k
    return TuningResult(r_cv, calibrate_r(r_cv, dim), cands, losses, v, dim, h)
