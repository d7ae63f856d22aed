"""Bootstrap calibration of the maximum, plus the naive and simultaneous baselines.

The calibrated statistic for replicate ``b`` is

    T*_b = max_j (rep_bj + c_j) - anchor_max,
    c_j  = (1 - n**(r - 0.5)) * (anchor_max - anchor_j),

and the one-sided bound at confidence ``q`` is ``point_raw - Q_q(T*)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class AnchorEstimates:
    anchor: np.ndarray
    source: str = "lasso_anchor"

    @property
    def anchor_max(self) -> float:
        return float(np.max(self.anchor))


def argmax_first(v) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(v)))


def empirical_quantile(sample, q: float) -> float:
    """Type-7 (linear interpolation) quantile."""
    return float(np.quantile(np.asarray(sample, dtype=float), q, method="linear"))


def check_r(r: float) -> float:
    r = float(r)
    if not 0.0 < r < 0.5:
        raise ConfigError(f"r must lie in the open interval (0, 0.5), got {r}")
    return r


def calibration_terms(anchor, n: int, r: float) -> np.ndarray:
    """Shift ``(1 - n^(r-0.5)) * (anchor_max - anchor_j)`` for each coordinate."""
    r = check_r(r)
    if n < 2:
        raise ValueError("n must be at least 2")
    a = anchor.anchor if isinstance(anchor, AnchorEstimates) else np.asarray(anchor, dtype=float)
    return (1.0 - float(n) ** (r - 0.5)) * (np.max(a) - a)


def modified_max_replicates(replicates, c, anchor_max: float) -> np.ndarray:
    R = np.asarray(replicates, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    c = np.asarray(c, dtype=float)
    if R.shape[1] != c.shape[0]:
        raise ValueError(f"replicates have {R.shape[1]} columns but c has {c.shape[0]} entries")
    return np.max(R + c, axis=1) - anchor_max


@dataclass
class CalibratedInference:
    method: str
    point_raw: float
    selected_index: int
    r_used: float
    T_star: np.ndarray = field(repr=False)
    confidence: tuple = (0.95,)

    @property
    def B(self) -> int:
        return int(self.T_star.shape[0])

    @property
    def bias_reduced(self) -> float:
        return self.point_raw - float(np.mean(self.T_star))

    def lower_bound(self, confidence: float = 0.95) -> float:
        if not 0.0 < confidence < 1.0:
            raise ConfigError(f"confidence must be in (0, 1), got {confidence}")
        return self.point_raw - empirical_quantile(self.T_star, confidence)

    @property
    def lower_bounds(self) -> dict:
        return {c: self.lower_bound(c) for c in self.confidence}

    def t_star_summary(self) -> dict:
        qs = (0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)
        return {"mean": float(np.mean(self.T_star)), "sd": float(np.std(self.T_star, ddof=1)) if self.B > 1 else 0.0,
                **{f"q{int(round(q * 100)):02d}": empirical_quantile(self.T_star, q) for q in qs}}


def _confidences(confidence) -> tuple:
    levels = (confidence,) if np.isscalar(confidence) else tuple(confidence)
    for c in levels:
        if not 0.0 < c < 1.0:
            raise ConfigError(f"confidence must be in (0, 1), got {c}")
    return tuple(float(c) for c in levels)


def infer_max(estimate_vector, replicates, anchor, n: int, r: float, confidence=0.95,
              method: str = "debiased") -> CalibratedInference:
    """Calibrated inference for the largest coordinate of ``estimate_vector``.

    ``replicates`` (B x p1) must be bootstrap draws centred at ``anchor``.
    """
    est = np.asarray(estimate_vector, dtype=float)
    R = np.asarray(replicates, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    bad = np.flatnonzero(~np.all(np.isfinite(R), axis=1))
    if bad.size:
        raise NumericalError(f"non-finite values in bootstrap replicate {int(bad[0])}")
    anchor = anchor if isinstance(anchor, AnchorEstimates) else AnchorEstimates(np.asarray(anchor, dtype=float))
    if R.shape[1] != est.shape[0] or anchor.anchor.shape[0] != est.shape[0]:
        raise ValueError("estimate, replicate and anchor dimensions disagree")
    c = calibration_terms(anchor, n, r)
    T = modified_max_replicates(R, c, anchor.anchor_max)
    s = argmax_first(est)
    return CalibratedInference(method, float(est[s]), s, float(r), T, _confidences(confidence))


def naive_inference(estimate_vector, se_vector, confidence=0.95) -> dict:
    """Plug-in maximum with a one-sided normal bound that ignores selection."""
    est = np.asarray(estimate_vector, dtype=float)
    se = np.asarray(se_vector, dtype=float)
    s = argmax_first(est)
    point = float(est[s])
    levels = _confidences(confidence)
    lower = {c: point - float(norm.ppf(c)) * float(se[s]) for c in levels}
    return {"point": point, "selected_index": s, "lower_bounds": lower, "lower_bound": lower[levels[0]]}


def simultaneous_inference(estimate_vector, replicates, centers, confidence=0.95, *,
                           studentize: bool = False, se=None) -> dict:
    """Sup-norm bootstrap bound over all coordinates.

    ``q`` is the ``confidence`` quantile of ``max_j (rep_bj - center_j)``
    (divided by ``se_j`` when ``studentize``); the bound holds for every
    coordinate at once and hence for the maximum.
    """
    est = np.asarray(estimate_vector, dtype=float)
    R = np.asarray(replicates, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    dev = R - np.asarray(centers, dtype=float)
    levels = _confidences(confidence)
    if studentize:
        se = np.asarray(se, dtype=float)
        stat = np.max(dev / se, axis=1)
        lower = {c: float(np.max(est - empirical_quantile(stat, c) * se)) for c in levels}
        point = float(np.max(est - empirical_quantile(stat, 0.5) * se))
    else:
        stat = np.max(dev, axis=1)
        lower = {c: float(np.max(est)) - empirical_quantile(stat, c) for c in levels}
        point = float(np.max(est)) - empirical_quantile(stat, 0.5)
    return {"point": point, "lower_bounds": lower, "lower_bound": lower[levels[0]],
            "selected_index": argmax_first(est)}
