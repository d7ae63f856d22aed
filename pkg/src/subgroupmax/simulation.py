"""Simulation designs and the Monte Carlo harness (coverage and root-n bias)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from multiprocessing import get_context

import numpy as np
from scipy.linalg import toeplitz
from scipy.stats import norm

from ._random import child_rng, child_seed
from .data import DataSet
from .errors import ConfigError, ConvergenceError, DataError, NumericalError
from .inference import run_inference
from .pipeline import METHODS, InferenceConfig

log = logging.getLogger(__name__)

DESIGNS = ("threshold", "power_continuous", "binary", "continuous")
PIPELINE_OUTPUTS = ("calibrated", "naive", "simultaneous")
EXTRA_METHODS = ("oracle_plugin",)
MAX_FAILURE_FRACTION = 0.02
PRESET_PREFIXES = ("benchmark", "table1")


@dataclass(frozen=True)
class ScenarioSpec:
    """A data-generating process.

    ``beta_case`` is ``heterogeneous`` (last coefficient 1, or ``effect``),
    ``spurious`` (all zero) or ``custom`` (``beta`` given). ``gamma_case`` is
    ``sparse4``, ``inverse_square``, ``first`` (a single leading 1) or
    ``custom``.
    """

    design: str = "binary"
    n: int = 300
    p1: int = 2
    p2: int = 400
    beta_case: str = "spurious"
    gamma_case: str = "sparse4"
    intercept: float = 0.5
    rho: float = 0.5
    noise: str = "std_normal"
    noise_sd: float = 1.0
    effect: float = 1.0
    beta: tuple | None = None
    gamma: tuple | None = None

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        if self.beta_case not in ("heterogeneous", "spurious", "custom"):
            raise ConfigError(f"unknown beta_case {self.beta_case!r}")
        if self.gamma_case not in ("sparse4", "inverse_square", "first", "custom"):
            raise ConfigError(f"unknown gamma_case {self.gamma_case!r}")
        if self.noise != "std_normal":
            raise ConfigError("only std_normal noise is supported")
        if self.n < 2 or self.p1 < 1 or self.p2 < 0 or self.noise_sd < 0:
            raise ConfigError("need n >= 2, p1 >= 1, p2 >= 0, noise_sd >= 0")
        if self.design == "threshold" and self.p1 != 2:
            raise ConfigError("the threshold design has exactly two subgroup columns")
        if self.design in ("power_continuous", "continuous") and 2 * self.p1 + 4 > self.p2:
            raise ConfigError(f"{self.design} needs p2 >= 2*p1 + 4 = {2 * self.p1 + 4}, got {self.p2}")
        if self.design == "binary" and 2 * self.p1 > self.p2:
            raise ConfigError(f"the binary design needs p2 >= 2*p1 = {2 * self.p1}, got {self.p2}")
        if self.beta_case == "custom" and (self.beta is None or len(self.beta) != self.p1):
            raise ConfigError("custom beta must have length p1")
        if self.gamma_case == "custom" and (self.gamma is None or len(self.gamma) != self.p2):
            raise ConfigError("custom gamma must have length p2")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.gamma is not None:
            object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    @classmethod
    def threshold(cls, **kw) -> "ScenarioSpec":
        base = dict(design="threshold", n=100, p1=2, p2=498, beta_case="custom", beta=(0.5, 0.5),
                    gamma_case="first", intercept=0.0)
        base.update(kw)
        return cls(**base)

    def beta_vector(self) -> np.ndarray:
        if self.beta_case == "custom":
            return np.array(self.beta, dtype=float)
        b = np.zeros(self.p1)
        if self.beta_case == "heterogeneous":
            b[-1] = self.effect
        return b

    def gamma_vector(self) -> np.ndarray:
        g = np.zeros(self.p2)
        if self.gamma_case == "custom":
            return np.array(self.gamma, dtype=float)
        if self.gamma_case == "sparse4":
            g[: min(4, self.p2)] = 1.0
        elif self.gamma_case == "inverse_square":
            g = 1.0 / np.arange(1, self.p2 + 1) ** 2
        elif self.p2:
            g[0] = 1.0
        return g

    def label(self) -> str:
        return f"{self.design}-{self.beta_case}-n{self.n}-p1_{self.p1}-p2_{self.p2}"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("beta", "gamma"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    beta: np.ndarray
    gamma: np.ndarray
    intercept: float

    @property
    def beta_max(self) -> float:
        return float(np.max(self.beta))

    @property
    def argmax_set(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.beta == np.max(self.beta)))


@lru_cache(maxsize=8)
def _toeplitz_factor(p: int, rho: float) -> np.ndarray:
    L = np.linalg.cholesky(toeplitz(rho ** np.arange(p)))
    L.flags.writeable = False
    return L


def _gaussian(rng, n, p, rho) -> np.ndarray:
    E = rng.standard_normal((n, p))
    if rho == 0.0 or p == 0:
        return E
    return E @ _toeplitz_factor(p, float(rho)).T


def generate(spec: ScenarioSpec, seed=0):
    """Draw one dataset; returns ``(DataSet, GroundTruth)``."""
    rng = child_rng(seed)
    n, p1, p2 = spec.n, spec.p1, spec.p2
    if spec.design == "threshold":
        W = _gaussian(rng, n, p1 + p2, spec.rho)
        Z = (W[:, :p1] > 0.5).astype(float)
        X = W[:, p1:]
    elif spec.design == "binary":
        X = _gaussian(rng, n, p2, spec.rho)
        eta = X[:, 0: 2 * p1: 2] + X[:, 1: 2 * p1: 2]
        Z = (rng.random((n, p1)) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        X = rng.standard_normal((n, p2))
        nu_sd = math.sqrt(0.1) if spec.design == "power_continuous" else 1.0
        nu = nu_sd * rng.standard_normal((n, p1))
        Z = 0.5 * X[:, 4: 2 * p1 + 4: 2] + (0.5 / math.sqrt(2.0)) * X[:, 5: 2 * p1 + 5: 2] + nu
    beta, gamma = spec.beta_vector(), spec.gamma_vector()
    eps = spec.noise_sd * rng.standard_normal(n)
    y = spec.intercept + Z @ beta + X @ gamma + eps
    names = tuple([f"z{j + 1}" for j in range(p1)] + [f"x{j + 1}" for j in range(p2)])
    return DataSet(y, Z, X, names), GroundTruth(beta, gamma, float(spec.intercept))


def oracle_plugin(data: DataSet, truth: GroundTruth, confidence: float = 0.95) -> dict:
    """OLS on the subgroups plus the true covariate support; plug-in maximum."""
    support = np.flatnonzero(truth.gamma != 0)
    W = np.hstack([np.ones((data.n, 1)), data.Z, data.X[:, support]])
    coef, *_ = np.linalg.lstsq(W, data.y, rcond=None)
    resid = data.y - W @ coef
    dof = data.n - W.shape[1]
    if dof <= 0:
        raise NumericalError("oracle regression has no residual degrees of freedom")
    cov = np.linalg.pinv(W.T @ W) * (resid @ resid / dof)
    b = coef[1: 1 + data.p1]
    se = np.sqrt(np.diag(cov)[1: 1 + data.p1])
    s = int(np.argmax(b))
    return {"point": float(b[s]), "lower": float(b[s] - norm.ppf(confidence) * se[s]), "selected": s}


def _method_list(methods) -> tuple:
    out = []
    for m in methods:
        if m in EXTRA_METHODS:
            out.append(m)
            continue
        pipe, _, kind = m.partition("_")
        if pipe not in METHODS or kind not in PIPELINE_OUTPUTS:
            raise ConfigError(f"unknown method {m!r}; use <debiased|rsplit>_<{'|'.join(PIPELINE_OUTPUTS)}> "
                              f"or one of {EXTRA_METHODS}")
        out.append(m)
    if not out:
        raise ConfigError("no methods requested")
    return tuple(out)


def _configs(inference_config) -> dict:
    if isinstance(inference_config, dict):
        return {k: (v if isinstance(v, InferenceConfig) else InferenceConfig.from_dict(v)).with_(method=k)
                for k, v in inference_config.items()}
    base = inference_config or InferenceConfig(r=0.1)
    return {m: base.with_(method=m) for m in METHODS}


_NAN_ROW = (np.nan, np.nan, -1)


def replication_seeds(seed, rep: int) -> dict:
    """Seeds of replication ``rep``: its dataset and each pipeline run on it."""
    out = {"data": child_seed(seed, rep, 0)}
    out.update({pipe: child_seed(seed, rep, 1 + k) for k, pipe in enumerate(METHODS)})
    return out


def _one_rep(args):
    spec, methods, configs, seed, rep, confidence = args
    seeds = replication_seeds(seed, rep)
    data, truth = generate(spec, seeds["data"])
    out = {}
    for pipe in METHODS:
        wanted = [m for m in methods if m.startswith(pipe + "_")]
        if not wanted:
            continue
        try:
            res = run_inference(data, configs[pipe].with_(confidence=(confidence,)), seeds[pipe])
        except (NumericalError, ConvergenceError, DataError, np.linalg.LinAlgError) as exc:
            log.warning("rep %d: %s pipeline failed: %s", rep, pipe, exc)
            for m in wanted:
                out[m] = _NAN_ROW
            continue
        cal = res.calibrated
        for m in wanted:
            kind = m.split("_", 1)[1]
            if kind == "calibrated":
                out[m] = (cal.bias_reduced, cal.lower_bound(confidence), cal.selected_index)
            elif kind == "naive":
                out[m] = (res.naive["point"], res.naive["lower_bounds"][confidence], res.naive["selected_index"])
            else:
                out[m] = (res.simultaneous["point"], res.simultaneous["lower_bounds"][confidence],
                          res.simultaneous["selected_index"])
    if "oracle_plugin" in methods:
        o = oracle_plugin(data, truth, confidence)
        out["oracle_plugin"] = (o["point"], o["lower"], o["selected"])
    return rep, out


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class MetricsTable:
    """Per-method Monte Carlo summaries plus the per-replication records."""

    scenario: dict
    methods: tuple
    reps: int
    seed: int
    confidence: float
    beta_max: float
    n: int
    point: dict = field(repr=False)
    lower: dict = field(repr=False)
    selected: dict = field(repr=False)
    beta: tuple = ()
    config: dict = field(default_factory=dict)
    wall_time: float = float("nan")

    def failures(self, m) -> int:
        return int(np.sum(np.isnan(self.point[m])))

    def _ok(self, m):
        return ~np.isnan(self.point[m])

    def covered(self, m) -> np.ndarray:
        ok = self._ok(m)
        return (self.lower[m][ok] <= self.beta_max).astype(float)

    def covered_selected(self, m) -> np.ndarray:
        ok = self._ok(m)
        sel = self.selected[m][ok].astype(int)
        return (self.lower[m][ok] <= np.asarray(self.beta)[sel]).astype(float)

    def rejection_rate(self, m, null: float = 0.0) -> float:
        ok = self._ok(m)
        return float(np.mean(self.lower[m][ok] > null))

    def summary(self, m) -> dict:
        ok = self._ok(m)
        k = int(ok.sum())
        cov = self.covered(m)
        cov_s = self.covered_selected(m)
        dev = np.sqrt(self.n) * (self.point[m][ok] - self.beta_max)
        c = float(np.mean(cov)) if k else float("nan")
        cs = float(np.mean(cov_s)) if k else float("nan")
        se_avail = k > 1
        return {
            "method": m,
            "reps": k,
            "failures": self.failures(m),
            "coverage": c,
            "coverage_se": math.sqrt(c * (1 - c) / k) if se_avail else None,
            "coverage_selected": cs,
            "coverage_selected_se": math.sqrt(cs * (1 - cs) / k) if se_avail else None,
            "sqrt_n_bias": float(np.mean(dev)) if k else float("nan"),
            "sqrt_n_bias_se": float(np.std(dev, ddof=1) / math.sqrt(k)) if se_avail else None,
            "rejection_rate": self.rejection_rate(m) if k else float("nan"),
            "mean_lower_bound": float(np.mean(self.lower[m][ok])) if k else float("nan"),
        }

    def rows(self) -> list:
        return [self.summary(m) for m in self.methods]

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        cols = ["scenario"] + list(rows[0].keys())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        label = ScenarioSpec.from_dict(self.scenario).label()
        for r in rows:
            w.writerow([label] + [_fmt(r[c]) for c in cols[1:]])
        return buf.getvalue()

    def to_dict(self, *, include_timing: bool = False) -> dict:
        d = {
            "scenario": self.scenario, "methods": list(self.methods), "reps": self.reps, "seed": self.seed,
            "confidence": self.confidence, "beta_max": self.beta_max, "n": self.n, "beta": list(self.beta),
            "config": self.config, "summary": self.rows(),
            "per_rep": {m: {"point": _listify(self.point[m]), "lower": _listify(self.lower[m]),
                            "selected": [int(s) for s in self.selected[m]]} for m in self.methods},
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        arr = lambda v: np.array([np.nan if x is None else x for x in v], dtype=float)  # noqa: E731
        return cls(d["scenario"], tuple(d["methods"]), d["reps"], d["seed"], d["confidence"], d["beta_max"],
                   d["n"], {m: arr(v["point"]) for m, v in d["per_rep"].items()},
                   {m: arr(v["lower"]) for m, v in d["per_rep"].items()},
                   {m: np.array(v["selected"], dtype=int) for m, v in d["per_rep"].items()},
                   tuple(d["beta"]), d.get("config", {}), d.get("wall_time", float("nan")))


def _listify(a) -> list:
    return [None if math.isnan(x) else float(x) for x in np.asarray(a, dtype=float)]


def run_monte_carlo(spec: ScenarioSpec, methods=("debiased_calibrated", "debiased_naive"), reps: int = 200,
                    inference_config=None, seed=0, *, workers: int = 1, confidence: float = 0.95,
                    max_failure_fraction: float = MAX_FAILURE_FRACTION, progress=None) -> MetricsTable:
    """Replicate ``generate`` + inference ``reps`` times.

    Replication ``i`` draws its data and bootstrap streams from seeds
    derived from ``(seed, i)``, so results do not depend on ``workers``.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if not 0.0 < confidence < 1.0:
        raise ConfigError("confidence must lie in (0, 1)")
    methods = _method_list(methods)
    configs = _configs(inference_config)
    jobs = [(spec, methods, configs, seed, i, confidence) for i in range(reps)]
    start = time.perf_counter()
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            for rep, out in pool.map(_one_rep, jobs, chunksize=max(1, reps // (4 * workers))):
                results[rep] = out
                if progress:
                    progress(len(results), reps)
    else:
        for job in jobs:
            rep, out = _one_rep(job)
            results[rep] = out
            if progress:
                progress(len(results), reps)
    elapsed = time.perf_counter() - start
    point = {m: np.array([results[i][m][0] for i in range(reps)]) for m in methods}
    lower = {m: np.array([results[i][m][1] for i in range(reps)]) for m in methods}
    sel = {m: np.array([results[i][m][2] for i in range(reps)], dtype=int) for m in methods}
    beta = spec.beta_vector()
    table = MetricsTable(spec.to_dict(), methods, reps, int(seed), float(confidence), float(np.max(beta)), spec.n,
                         point, lower, sel, tuple(float(b) for b in beta),
                         {k: v.to_dict() for k, v in configs.items()}, elapsed)
    worst = max(table.failures(m) for m in methods)
    if worst > 0 and worst >= max_failure_fraction * reps:
        raise NumericalError(f"{worst} of {reps} replications failed (limit {max_failure_fraction:.0%})")
    return table


def power_curve(spec: ScenarioSpec, effects, methods=("debiased_calibrated", "rsplit_calibrated"),
                reps: int = 200, inference_config=None, seed=0, *, workers: int = 1,
                confidence: float = 0.95) -> list:
    """Rejection rates of ``H0: beta_max <= 0`` as the largest effect grows.

    The last coefficient is set to each effect size and the others to zero;
    every effect uses the same seed (common random numbers).
    Returns ``(effect, method, rejection_rate, se)`` tuples.
    """
    out = []
    for eff in effects:
        beta = tuple([0.0] * (spec.p1 - 1) + [float(eff)])
        s = replace(spec, beta_case="custom", beta=beta)
        table = run_monte_carlo(s, methods, reps, inference_config, seed, workers=workers, confidence=confidence)
        for m in table.methods:
            rate = table.rejection_rate(m)
            k = int(np.sum(~np.isnan(table.point[m])))
            out.append((float(eff), m, rate, math.sqrt(rate * (1 - rate) / k) if k > 1 else None))
    return out


def preset(name: str) -> tuple:
    """Named scenario plus matching inference settings.

    ``benchmark-<binary|continuous>-<spurious|heterogeneous>-p<k>`` (alias
    prefix ``table1``) runs the four-method comparison at a small scale
    (n=300, p2=400); ``threshold`` and ``power-continuous`` cover the other
    two designs.
    Returns ``(ScenarioSpec, {pipeline: InferenceConfig}, methods)``.
    """
    from .rsplit import SelectorConfig

    if name == "threshold":
        spec = ScenarioSpec.threshold()
        # at n=100, p=500 the one-SE penalties leave a large shrinkage remainder in the debiased coordinates
        cfg = InferenceConfig(method="debiased", r=0.1, lambda_mode="min", nodewise_lambda="min")
        return spec, {"debiased": cfg}, ("oracle_plugin", "debiased_calibrated", "debiased_naive")
    if name == "power-continuous":
        spec = ScenarioSpec(design="power_continuous", beta_case="spurious")
        return spec, {"debiased": InferenceConfig(method="debiased", r=0.1, lambda_mode="one_se_x1.1"),
                      "rsplit": InferenceConfig(method="rsplit", r=0.1, B1=500)}, \
            ("debiased_calibrated", "rsplit_calibrated")
    parts = name.split("-")
    if len(parts) != 4 or parts[0] not in PRESET_PREFIXES or parts[1] not in ("binary", "continuous") \
            or parts[2] not in ("spurious", "heterogeneous") or not parts[3].startswith("p"):
        raise ConfigError(f"unknown preset {name!r}")
    try:
        p1 = int(parts[3][1:])
    except ValueError:
        raise ConfigError(f"unknown preset {name!r}") from None
    design = "binary" if parts[1] == "binary" else "continuous"
    spec = ScenarioSpec(design=design, p1=p1, beta_case=parts[2])
    lam = "lambda0" if parts[1] == "binary" else "one_se_x1.1"
    cfgs = {"debiased": InferenceConfig(method="debiased", r="auto", lambda_mode=lam),
            "rsplit": InferenceConfig(method="rsplit", r=0.1, lambda_mode=lam, B1=500,
                                      selector=SelectorConfig(s_min=5))}
    return spec, cfgs, ("debiased_calibrated", "rsplit_calibrated", "debiased_naive", "debiased_simultaneous")
