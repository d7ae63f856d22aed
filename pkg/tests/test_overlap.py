import numpy as np
import pytest

from subgroupmax.errors import DataError
from subgroupmax.overlap import (atom_design, atomize, build_A, check_complete_separation, read_A_table,
                                 transform_to_original)

# sex x age toy: columns are (male, female, young, senior)
TOY_PATTERNS = np.array([[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]])


def _toy(per_cell=5):
    return np.repeat(TOY_PATTERNS, per_cell, axis=0)


def test_toy_four_atoms():
    atoms = atomize(_toy())
    assert atoms.p1 == 4
    assert atoms.names(["male", "female", "young", "senior"]) == [
        "male&young", "male&senior", "female&young", "female&senior"]
    np.testing.assert_array_equal(atoms.counts, [5, 5, 5, 5])


def test_toy_A_male_row():
    A = build_A(_toy())
    np.testing.assert_allclose(A[0], [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(A[2], [0.5, 0, 0.5, 0])
    assert A.shape == (4, 4)


def test_toy_male_effect():
    A = build_A(_toy())
    beta, _, _ = transform_to_original(np.array([1.0, 2, 3, 4]), np.zeros((1, 4)), np.zeros(4), A)
    assert beta[0] == pytest.approx(1.5)


def test_single_group_covering_everyone():
    atoms = atomize(np.ones((10, 1)))
    assert atoms.p1 == 1
    ok, _ = check_complete_separation(np.ones((10, 1)), atoms.labels)
    assert ok


def test_three_patterns_three_atoms():
    atoms = atomize(np.array([[1, 0], [0, 1], [1, 1]]), min_count=1)
    assert atoms.p1 == 3


def test_disjoint_groups_give_permutation():
    M = np.zeros((9, 3), dtype=int)
    M[np.arange(9), np.arange(9) % 3] = 1
    A = build_A(M, atomize(M, min_count=1))
    assert np.array_equal(np.sort(A, axis=1)[:, -1], np.ones(3))
    assert np.array_equal(A.sum(axis=0), np.ones(3))


def test_A_matches_counting_oracle(rng):
    M = (rng.random((300, 4)) < 0.5).astype(int)
    M[M.sum(axis=1) == 0, 0] = 1
    atoms = atomize(M, min_count=0)
    A = build_A(M, atoms)
    for k in range(4):
        members = [i for i in range(300) if M[i, k] == 1]
        for j in range(atoms.p1):
            count = sum(1 for i in members if tuple(M[i]) == tuple(atoms.patterns[j]))
            assert abs(A[k, j] - count / len(members)) <= 1e-12


def test_atoms_always_completely_separated(rng):
    M = (rng.random((200, 3)) < 0.4).astype(int)
    M[M.sum(axis=1) == 0, 2] = 1
    ok, violations = check_complete_separation(M, atomize(M, min_count=0).labels)
    assert ok and violations == []


def test_coarser_grouping_violates_separation():
    M = _toy()
    labels = atomize(M).labels.copy()
    labels[labels == 1] = 0  # merge young male with senior male: crosses the age boundary
    ok, violations = check_complete_separation(M, labels)
    assert not ok
    assert (0, 2) in violations and (0, 3) in violations


def test_background_requires_opt_in():
    M = np.array([[1, 0], [0, 0], [0, 1]] * 5)
    with pytest.raises(DataError, match="no subgroup"):
        atomize(M)
    atoms = atomize(M, allow_background=True)
    assert "background" in atoms.names()


def test_small_atom_warning():
    with pytest.warns(UserWarning, match="fewer than"):
        atomize(np.array([[1, 0], [0, 1], [1, 1]]))


def test_empty_group_rejected():
    with pytest.raises(DataError, match="empty"):
        build_A(np.array([[1, 0]] * 6))


def test_external_table_validation(tmp_path):
    with pytest.raises(DataError, match="does not sum"):
        build_A(table=[[0.5, 0.4]])
    f = tmp_path / "A.csv"
    f.write_text("group,b,a\nS1,0.25,0.75\nS2,1,0\n")
    np.testing.assert_allclose(read_A_table(f, ["a", "b"]), [[0.75, 0.25], [0.0, 1.0]])
    with pytest.raises(DataError, match="missing"):
        read_A_table(f, ["a", "c"])


def test_identity_transform_is_noop(rng):
    est, reps, anc = rng.standard_normal(3), rng.standard_normal((5, 3)), rng.standard_normal(3)
    out = transform_to_original(est, reps, anc, np.eye(3))
    np.testing.assert_array_equal(out[0], est)
    np.testing.assert_array_equal(out[1], reps)
    np.testing.assert_array_equal(out[2], anc)


def test_transform_dimension_mismatch():
    with pytest.raises(DataError):
        transform_to_original(np.zeros(3), np.zeros((2, 3)), np.zeros(3), np.eye(2))


def test_noiseless_recovery_of_group_effects(rng):
    n = 400
    M = np.zeros((n, 3), dtype=int)
    M[:, 0] = rng.random(n) < 0.5
    M[:, 1] = 1 - M[:, 0]
    M[:, 2] = rng.random(n) < 0.3
    atoms = atomize(M)
    theta = rng.standard_normal(atoms.p1)
    effect = theta[atoms.labels]
    # the per-group effect is the average individual effect inside the group
    direct = np.array([effect[M[:, k] == 1].mean() for k in range(3)])
    beta, _, _ = transform_to_original(theta, theta[None, :], theta, build_A(M, atoms))
    assert np.max(np.abs(beta - direct)) <= 1e-10


def test_atom_design_without_treatment(rng):
    M = _toy(10)
    y = rng.standard_normal(40)
    ds, spec = atom_design(y, M, group_names=["m", "f", "y", "s"])
    assert ds.p1 == 4 and not ds.intercept
    np.testing.assert_array_equal(ds.Z.sum(axis=1), np.ones(40))
    assert ds.subgroup_names[0] == "atom:m&y"
    assert spec.K == 4


def test_atom_design_with_treatment(rng):
    M = _toy(10)
    t = (rng.random(40) < 0.5).astype(float)
    X = rng.standard_normal((40, 2))
    ds, spec = atom_design(rng.standard_normal(40), M, treatment=t, X=X)
    assert ds.p1 == 4 and ds.p2 == 3 + 2 and ds.intercept
    np.testing.assert_array_equal(ds.Z.sum(axis=1), t)
