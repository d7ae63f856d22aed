"""End-to-end calibrated inference on a dataset and its serializable report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._random import child_seed
from .calibration import (AnchorEstimates, CalibratedInference, infer_max, naive_inference,
                          simultaneous_inference)
from .data import DataSet
from .pipeline import _S_TUNE, InferenceConfig, PipelineDraw, estimate_and_bootstrap
from .tuning import TuningResult, cross_validate_r


@dataclass
class InferenceResult:
    draw: PipelineDraw
    calibrated: CalibratedInference
    naive: dict
    simultaneous: dict
    tuning: TuningResult | None
    labels: tuple
    config: InferenceConfig
    seed: int

    @property
    def selected_label(self) -> str:
        return self.labels[self.calibrated.selected_index]

    def report(self) -> "InferenceReport":
        cal = self.calibrated
        return InferenceReport(
            config=self.config.to_dict(),
            seed=int(self.seed),
            method=cal.method,
            labels=list(self.labels),
            estimates=self.draw.estimate.tolist(),
            se=self.draw.se.tolist(),
            anchor=self.draw.anchor.tolist(),
            selected_index=cal.selected_index,
            selected_label=self.selected_label,
            point_raw=cal.point_raw,
            bias_reduced=cal.bias_reduced,
            lower_bounds={_key(c): v for c, v in cal.lower_bounds.items()},
            r_used=cal.r_used,
            B=cal.B,
            lam=self.draw.lam,
            t_star=cal.t_star_summary(),
            tuning=None if self.tuning is None else self.tuning.to_dict(),
            naive=_jsonable(self.naive),
            simultaneous=_jsonable(self.simultaneous),
            details=_jsonable(self.draw.details),
        )


def _key(c: float) -> str:
    return repr(float(c))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {(_key(k) if isinstance(k, float) else str(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


@dataclass
class InferenceReport:
    """Plain-data record of one inference run; lossless through JSON."""

    config: dict
    seed: int
    method: str
    labels: list
    estimates: list
    se: list
    anchor: list
    selected_index: int
    selected_label: str
    point_raw: float
    bias_reduced: float
    lower_bounds: dict
    r_used: float
    B: int
    lam: float
    t_star: dict
    tuning: dict | None = None
    naive: dict | None = None
    simultaneous: dict | None = None
    details: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InferenceReport":
        return cls(**json.loads(text))

    def summary_lines(self) -> list:
        """One grep-able line per confidence level."""
        return [f"selected={self.selected_label} method={self.method} r={self.r_used:.6g} "
                f"bias_reduced={self.bias_reduced:.6f} confidence={c} lower_bound={lb:.6f}"
                for c, lb in sorted(self.lower_bounds.items(), key=lambda kv: float(kv[0]))]


def run_inference(data: DataSet, config: InferenceConfig | None = None, seed=0, *, transform=None,
                  labels=None, baselines: bool = True) -> InferenceResult:
    """Estimate, tune ``r`` if requested, bootstrap and calibrate.

    ``transform`` (K x p1) maps subgroup coefficients onto K reported groups
    (overlapping-subgroup workflow); ``labels`` name the reported groups.
    """
    config = config or InferenceConfig()
    draw = estimate_and_bootstrap(data, config, seed)
    if transform is not None:
        draw = draw.transformed(transform)
    k = draw.estimate.shape[0]
    labels = tuple(labels) if labels is not None else (data.subgroup_names if transform is None
                                                       else tuple(f"group{i + 1}" for i in range(k)))
    tuning = None
    if config.r == "auto":
        tuning = cross_validate_r(data, config.candidates, config.tune_folds, config.method, config.B_inner,
                                  child_seed(seed, _S_TUNE), config=config, transform=transform)
        r = tuning.r_star
    else:
        r = float(config.r)
    source = "lasso_anchor" if draw.method == "debiased" else "rsplit_anchor"
    cal = infer_max(draw.estimate, draw.replicates, AnchorEstimates(draw.anchor, source), draw.n, r,
                    config.confidence, draw.method)
    naive = simul = None
    if baselines:
        naive = naive_inference(draw.estimate, draw.se, config.confidence)
        simul = simultaneous_inference(draw.estimate, draw.replicates, draw.anchor, config.confidence,
                                       studentize=config.studentize_simultaneous, se=draw.se)
    return InferenceResult(draw, cal, naive, simul, tuning, labels, config, int(seed))
