import json

import numpy as np
import pytest

from conftest import random_dataset
from subgroupmax.errors import ConfigError
from subgroupmax.inference import InferenceReport, run_inference
from subgroupmax.pipeline import InferenceConfig, estimate_and_bootstrap
from subgroupmax.rsplit import SelectorConfig

FAST = InferenceConfig(r=0.1, B=100, cv_folds=5, confidence=(0.9, 0.95))


def _data(rng, p1=3):
    return random_dataset(rng, n=100, p1=p1, p2=20, beta=np.linspace(0, 0.4, p1), gamma=np.r_[1.0, np.zeros(19)])


def test_report_round_trips_through_json(rng):
    rep = run_inference(_data(rng), FAST, seed=3).report()
    back = InferenceReport.from_json(rep.to_json())
    assert back == InferenceReport(**json.loads(json.dumps(rep.__dict__)))
    assert back.to_json() == rep.to_json()
    assert set(back.lower_bounds) == {"0.9", "0.95"}


def test_summary_lines_one_per_level(rng):
    rep = run_inference(_data(rng), FAST, seed=3).report()
    lines = rep.summary_lines()
    assert len(lines) == 2
    assert lines[0].startswith(f"selected={rep.selected_label} ") and "confidence=0.9 " in lines[0]
    assert rep.lower_bounds["0.95"] <= rep.lower_bounds["0.9"]


def test_same_seed_same_report(rng):
    d = _data(rng)
    assert run_inference(d, FAST, seed=8).report().to_json() == run_inference(d, FAST, seed=8).report().to_json()


def test_workers_do_not_change_report(rng):
    d = _data(rng)
    a = run_inference(d, FAST, seed=8).report().to_json()
    b = run_inference(d, FAST.with_(workers=2), seed=8).report().to_json()
    assert a == b


def test_single_subgroup_calibration_is_inactive(rng):
    d = _data(rng, p1=1)
    res = run_inference(d, FAST.with_(B=1000), seed=2)
    draw = res.draw
    assert res.calibrated.selected_index == 0
    q = np.quantile(draw.replicates[:, 0] - draw.anchor[0], 0.95)
    assert res.calibrated.lower_bounds[0.95] == pytest.approx(draw.estimate[0] - q, abs=1e-12)
    # the draws are a sum of many multiplier terms, so their 95% point is close to the normal one
    sd = draw.replicates[:, 0].std(ddof=1)
    assert abs(q - 1.6448536 * sd) <= 0.1 * sd


def test_identity_transform_changes_nothing(rng):
    d = _data(rng)
    a = run_inference(d, FAST, seed=4)
    b = run_inference(d, FAST, seed=4, transform=np.eye(3), labels=d.subgroup_names)
    assert a.report().to_json() == b.report().to_json()


def test_transform_width_checked(rng):
    with pytest.raises(ConfigError):
        run_inference(_data(rng), FAST, transform=np.eye(2))


def test_auto_r_records_tuning(rng):
    cfg = FAST.with_(r="auto", candidates=(0.1, 0.3), B_inner=20, tune_folds=2)
    res = run_inference(random_dataset(rng, n=120, p1=2, p2=10), cfg, seed=1)
    assert res.tuning is not None and res.tuning.r_cv in (0.1, 0.3)
    assert res.calibrated.r_used == res.tuning.r_star
    assert res.report().tuning["r_star"] == res.tuning.r_star


def test_rsplit_pipeline_runs(rng):
    cfg = FAST.with_(method="rsplit", B1=40, B2=60, selector=SelectorConfig(s_min=2))
    res = run_inference(_data(rng), cfg, seed=1)
    assert res.draw.replicates.shape == (60, 3)
    assert np.all(np.isfinite(res.draw.se))
    assert res.report().details["kept_splits"] == 40


def test_debiased_anchor_is_lasso(rng):
    d = _data(rng)
    draw = estimate_and_bootstrap(d, FAST, seed=0, bootstrap=False)
    assert draw.replicates is None
    assert draw.details["active_size"] >= 0 and draw.lam > 0


@pytest.mark.parametrize("bad", [dict(r=0.5), dict(r="x"), dict(B=0), dict(confidence=(1.0,)),
                                 dict(method="ols"), dict(multiplier="pareto"), dict(candidates=())])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        InferenceConfig(**bad)


def test_config_dict_round_trip():
    cfg = InferenceConfig(method="rsplit", r=0.2, selector=SelectorConfig(s_min=5), workers=4)
    d = cfg.to_dict()
    assert "workers" not in d
    assert InferenceConfig.from_dict(json.loads(json.dumps(d))) == cfg.with_(workers=1)
