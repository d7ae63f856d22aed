"""Estimator plus bootstrap for either pipeline, shared by inference and tuning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ._random import MULTIPLIERS, child_seed
from .data import DataSet, STANDARDIZE_POLICIES, standardize
from .debiased import debias, default_weights, nodewise_residualize, wild_bootstrap_debiased
from .errors import ConfigError
from .lasso import LAMBDA_MODES, FoldSet, GramData, fit_gram, make_folds, select_lambda
from .rsplit import SelectorConfig, linear_form_cov, rsplit_bootstrap, rsplit_estimate

METHODS = ("debiased", "rsplit")
DEFAULT_CANDIDATES = tuple(1.0 / (3 * k) for k in range(1, 11))

# stream labels for child seeds
_S_FOLDS, _S_BOOT, _S_SPLITS, _S_TUNE = 0, 1, 2, 3


@dataclass(frozen=True)
class InferenceConfig:
    """Every knob of a single inference run.

    ``r`` is a number in (0, 0.5) or ``"auto"`` for cross-validated tuning.
    ``lambda_mode`` picks the penalty of the full-sample Lasso (its residuals
    drive both bootstraps); ``nodewise_lambda`` the per-column penalties.
    """

    method: str = "debiased"
    r: float | str = "auto"
    B: int = 200
    B1: int = 1000
    B2: int = 200
    confidence: tuple = (0.95,)
    multiplier: str = "rademacher"
    lambda_mode: float | str = "one_se"
    nodewise_lambda: float | str = "one_se"
    cv_folds: int = 10
    standardize: str = "center_scale"
    split_fraction: float = 0.5
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    candidates: tuple = DEFAULT_CANDIDATES
    tune_folds: int = 3
    B_inner: int = 100
    studentize_simultaneous: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if isinstance(self.r, str):
            if self.r != "auto":
                raise ConfigError(f"r must be 'auto' or a number in (0, 0.5), got {self.r!r}")
        elif not 0.0 < float(self.r) < 0.5:
            raise ConfigError(f"r must lie in the open interval (0, 0.5), got {self.r}")
        for name in ("B", "B1", "B2", "B_inner", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        levels = tuple(float(c) for c in np.atleast_1d(self.confidence))
        if not levels or any(not 0.0 < c < 1.0 for c in levels):
            raise ConfigError(f"confidence levels must lie in (0, 1), got {self.confidence}")
        object.__setattr__(self, "confidence", levels)
        if self.multiplier not in MULTIPLIERS:
            raise ConfigError(f"multiplier must be one of {MULTIPLIERS}")
        for name in ("lambda_mode", "nodewise_lambda"):
            v = getattr(self, name)
            if isinstance(v, str) and v not in LAMBDA_MODES:
                raise ConfigError(f"{name} must be one of {LAMBDA_MODES} or a number, got {v!r}")
        if isinstance(self.nodewise_lambda, str) and self.nodewise_lambda not in ("one_se", "min"):
            raise ConfigError("nodewise_lambda must be 'one_se', 'min' or a number")
        if self.standardize not in STANDARDIZE_POLICIES:
            raise ConfigError(f"standardize must be one of {STANDARDIZE_POLICIES}")
        if self.cv_folds < 2 or self.tune_folds < 2:
            raise ConfigError("fold counts must be at least 2")
        cands = tuple(sorted(float(c) for c in self.candidates))
        if not cands or any(not 0.0 < c < 0.5 for c in cands):
            raise ConfigError("tuning candidates must be nonempty and lie in (0, 0.5)")
        object.__setattr__(self, "candidates", cands)

    def to_dict(self) -> dict:
        """Result-determining fields; ``workers`` is left out because it never changes results."""
        out = {}
        for f in fields(self):
            if f.name == "workers":
                continue
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if f.name == "selector" else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceConfig":
        d = dict(d)
        if isinstance(d.get("selector"), dict):
            d["selector"] = SelectorConfig(**d["selector"])
        for k in ("confidence", "candidates"):
            if k in d and d[k] is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def with_(self, **changes) -> "InferenceConfig":
        return replace(self, **changes)


@dataclass
class PipelineDraw:
    """Point estimates, their covariance, the bootstrap anchor and replicates."""

    method: str
    estimate: np.ndarray
    cov: np.ndarray
    anchor: np.ndarray
    replicates: np.ndarray
    lam: float
    n: int
    details: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def transformed(self, A) -> "PipelineDraw":
        """Map subgroup-level objects through ``A`` (rows index the reported groups)."""
        A = np.asarray(A, dtype=float)
        if A.shape[1] != self.estimate.shape[0]:
            raise ConfigError(f"A has {A.shape[1]} columns but the estimate has {self.estimate.shape[0]}")
        reps = None if self.replicates is None else self.replicates @ A.T
        return PipelineDraw(self.method, A @ self.estimate, A @ self.cov @ A.T, A @ self.anchor,
                            reps, self.lam, self.n, self.details)


def estimate_and_bootstrap(data: DataSet, config: InferenceConfig, seed=0, *, B: int | None = None,
                           bootstrap: bool = True) -> PipelineDraw:
    """Fit the configured estimator and draw its bootstrap replicates."""
    d, _ = standardize(data, config.standardize)
    gd = GramData(d.design, d.intercept)
    w = default_weights(gd)
    fold_ids = make_folds(d.n, config.cv_folds, child_seed(seed, _S_FOLDS))
    fs = FoldSet(gd, fold_ids)
    lam, _ = select_lambda(gd, d.y, w, config.lambda_mode, fs=fs)
    fit = fit_gram(gd, d.y, lam, w, p1=d.p1)
    boot_seed = child_seed(seed, _S_BOOT)
    if config.method == "debiased":
        proj = nodewise_residualize(d, config.nodewise_lambda, gram=gd, weights=w, fold_set=fs)
        est = debias(fit, proj, d)
        cov = est.sigma_eps2 * (proj.Ztilde.T @ proj.Ztilde)
        reps = None
        if bootstrap:
            reps = wild_bootstrap_debiased(fit, proj, d, B or config.B, config.multiplier, boot_seed,
                                           gram=gd, workers=config.workers)
        return PipelineDraw("debiased", est.b_hat, cov, fit.beta_hat.copy(), reps, float(lam), d.n,
                            {"sigma_eps2": est.sigma_eps2, "lambda_node": proj.lambda_node,
                             "active_size": int(fit.active_set.size)})
    est = rsplit_estimate(d, config.B1, config.split_fraction, config.selector, child_seed(seed, _S_SPLITS),
                          residuals=fit.residuals, gram=gd)
    cov = linear_form_cov(est.Gamma_tilde, gd.Xc, est.residuals_for_boot)
    reps = None
    if bootstrap:
        reps = rsplit_bootstrap(est, d, B or config.B2, config.multiplier, boot_seed, gram=gd)
    return PipelineDraw("rsplit", est.b_tilde, cov, est.b_tilde.copy(), reps, float(lam), d.n,
                        {"kept_splits": est.kept_splits, "discarded_splits": est.discarded_splits,
                         "mean_model_size": float(np.mean(est.model_sizes))})
