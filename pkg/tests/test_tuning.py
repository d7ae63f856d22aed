import numpy as np
import pytest

from conftest import random_dataset
from subgroupmax._random import child_seed
from subgroupmax.errors import ConfigError, DataError
from subgroupmax.pipeline import DEFAULT_CANDIDATES, InferenceConfig, estimate_and_bootstrap
from subgroupmax.tuning import R_CEILING, calibrate_r, cross_validate_r, select_r

FAST = InferenceConfig(B=30, cv_folds=5)


def test_calibrate_identity_at_two():
    assert calibrate_r(0.2, 2) == 0.2


def test_calibrate_shrinks_with_dimension():
    assert calibrate_r(0.2, 8) == pytest.approx(0.1)


def test_calibrate_clamps_below_half():
    assert calibrate_r(0.45, 1) == R_CEILING


def test_calibrate_rejects_bad_input():
    with pytest.raises(ConfigError):
        calibrate_r(0.6, 2)


def test_select_r_ties_to_smallest():
    losses = np.array([[1.0, 2.0], [0.5, 3.0], [0.5, 0.7]])
    assert select_r([0.3, 0.1, 0.2], losses) == 0.1
    assert select_r([0.3, 0.2, 0.1], losses) == 0.1


def test_default_candidates():
    assert DEFAULT_CANDIDATES[0] == pytest.approx(1 / 3)
    assert DEFAULT_CANDIDATES[-1] == pytest.approx(1 / 30)
    assert len(DEFAULT_CANDIDATES) == 10


def test_singleton_candidate(rng):
    d = random_dataset(rng, n=90, p1=2, p2=10, gamma=np.r_[1.0, np.zeros(9)])
    res = cross_validate_r(d, [0.2], v=3, B_inner=20, seed=1, config=FAST)
    assert res.r_cv == 0.2 and res.r_star == 0.2
    assert res.candidate_losses.shape == (1, 2)


def test_r_star_adjusts_for_dimension(rng):
    d = random_dataset(rng, n=90, p1=8, p2=10)
    res = cross_validate_r(d, [0.2], v=3, B_inner=10, seed=1, config=FAST)
    assert res.r_star == pytest.approx(0.1)
    assert cross_validate_r(d, [0.2], v=3, B_inner=10, seed=1, config=FAST, dimension=2).r_star == 0.2


def test_losses_recomputed_by_hand(rng):
    d = random_dataset(rng, n=90, p1=2, p2=10, beta=[0.0, 0.3], gamma=np.r_[1.0, np.zeros(9)])
    cands = (0.1, 0.25, 0.4)
    res = cross_validate_r(d, cands, v=3, B_inner=25, seed=4, config=FAST)
    perm = np.random.default_rng(child_seed(4, 0)).permutation(d.n)
    fold = np.empty(d.n, dtype=int)
    fold[perm] = np.arange(d.n) % 3
    cfg = FAST.with_(r=0.1, B_inner=25)
    h = np.zeros((3, 3, 2))
    for j in range(3):
        tr = estimate_and_bootstrap(d.subset(np.flatnonzero(fold != j)), cfg, child_seed(4, 1, j), B=25)
        rf = estimate_and_bootstrap(d.subset(np.flatnonzero(fold == j)), cfg, child_seed(4, 2, j), bootstrap=False)
        amax = tr.anchor.max()
        for l, r in enumerate(cands):
            shifted = tr.replicates + (1 - tr.n ** (r - 0.5)) * (amax - tr.anchor)
            reduced = tr.estimate.max() - np.mean(shifted.max(axis=1) - amax)
            h[l, j] = (reduced - rf.estimate) ** 2 - rf.se ** 2
    np.testing.assert_allclose(res.candidate_losses, h.mean(axis=1), rtol=1e-10, atol=1e-14)
    best = np.min(h.mean(axis=1), axis=1)
    assert res.r_cv == cands[int(np.argmin(best))]


def test_too_many_folds(rng):
    d = random_dataset(rng, n=30)
    with pytest.raises(ConfigError, match="exceeds the sample size"):
        cross_validate_r(d, v=31)


def test_folds_too_small(rng):
    d = random_dataset(rng, n=40)
    with pytest.raises(DataError, match="fewer folds"):
        cross_validate_r(d, v=3)


def test_candidates_validated(rng):
    d = random_dataset(rng, n=90)
    with pytest.raises(ConfigError):
        cross_validate_r(d, [0.6])
    with pytest.raises(ConfigError):
        cross_validate_r(d, [])
