"""Overlapping subgroups: refine them into disjoint atoms and map atom effects back.

Atoms are the distinct membership patterns. Each original group ``k`` is a
union of atoms, so its effect is the membership-weighted average
``beta_k = sum_j A_kj theta_j`` with ``A_kj = |S_k & atom_j| / |S_k|``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataSet
from .errors import DataError

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class Atoms:
    """``labels[i]`` is the atom of individual ``i``; ``patterns[j]`` the membership row of atom ``j``."""

    labels: np.ndarray
    patterns: np.ndarray
    counts: np.ndarray

    @property
    def p1(self) -> int:
        return self.patterns.shape[0]

    def names(self, group_names=None) -> list:
        K = self.patterns.shape[1]
        group_names = list(group_names) if group_names is not None else [f"S{k + 1}" for k in range(K)]
        out = []
        for pat in self.patterns:
            members = [group_names[k] for k in range(K) if pat[k]]
            out.append("&".join(members) if members else "background")
        return out


@dataclass
class OverlapSpec:
    membership: np.ndarray
    atoms: Atoms
    A: np.ndarray
    A_source: str = "from_sample"

    @property
    def K(self) -> int:
        return self.membership.shape[1]


def _membership(membership) -> np.ndarray:
    M = np.asarray(membership)
    if M.ndim != 2:
        raise DataError("membership must be an n x K matrix")
    if not np.all((M == 0) | (M == 1)):
        raise DataError("membership entries must be 0 or 1")
    return M.astype(np.int8)


def atomize(membership, *, allow_background: bool = False, min_count: int = 5) -> Atoms:
    """Partition individuals by their membership pattern.

    Patterns are ordered lexicographically from the highest (member of the
    earliest groups) down, so groups listed first claim the first atoms.
    Rows outside every group raise unless ``allow_background`` is set, in
    which case they form the all-zero atom.
    """
    M = _membership(membership)
    if not allow_background and np.any(M.sum(axis=1) == 0):
        i = int(np.flatnonzero(M.sum(axis=1) == 0)[0])
        raise DataError(f"individual {i} belongs to no subgroup")
    patterns, inverse, counts = np.unique(M, axis=0, return_inverse=True, return_counts=True)
    order = np.lexsort(patterns.T[::-1])[::-1]
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    labels = rank[np.asarray(inverse).reshape(-1)]
    small = counts[order] < min_count
    if np.any(small):
        warnings.warn(f"{int(small.sum())} atom(s) have fewer than {min_count} members; "
                      "their effects are weakly identified", stacklevel=2)
    return Atoms(labels, patterns[order].astype(np.int8), counts[order])


def build_A(membership=None, atoms: Atoms | None = None, *, table=None) -> np.ndarray:
    """Conditional-proportion matrix, counted from the sample or taken from ``table``."""
    if table is not None:
        A = np.asarray(table, dtype=float)
        if A.ndim != 2 or not np.all(np.isfinite(A)) or np.any(A < 0) or np.any(A > 1):
            raise DataError("external proportion table must hold finite entries in [0, 1]")
        bad = np.flatnonzero(np.abs(A.sum(axis=1) - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise DataError(f"row {int(bad[0])} of the proportion table does not sum to 1")
        return A
    M = _membership(membership)
    atoms = atoms if atoms is not None else atomize(M)
    sizes = M.sum(axis=0).astype(float)
    if np.any(sizes == 0):
        raise DataError(f"subgroup {int(np.flatnonzero(sizes == 0)[0])} is empty")
    onehot = np.zeros((M.shape[0], atoms.p1))
    onehot[np.arange(M.shape[0]), atoms.labels] = 1.0
    return (M.T.astype(float) @ onehot) / sizes[:, None]


def read_A_table(path, atom_names) -> np.ndarray:
    """Read an external table (header = atom names, first column = group name)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0][1:]]
    missing = [a for a in atom_names if a not in header]
    if missing:
        raise DataError(f"atoms missing from proportion table: {missing}")
    idx = [header.index(a) for a in atom_names]
    try:
        values = np.array([[float(r[1:][i]) for i in idx] for r in rows[1:] if r], dtype=float)
    except ValueError:
        raise DataError("non-numeric entry in proportion table") from None
    return build_A(table=values)


def transform_to_original(theta_estimates, theta_replicates, theta_anchor, A):
    """Apply ``A`` to estimates, every replicate row and the anchor."""
    A = np.asarray(A, dtype=float)
    est = np.asarray(theta_estimates, dtype=float)
    reps = np.asarray(theta_replicates, dtype=float)
    anc = np.asarray(theta_anchor, dtype=float)
    p1 = A.shape[1]
    if est.shape != (p1,) or anc.shape != (p1,) or reps.ndim != 2 or reps.shape[1] != p1:
        raise DataError(f"dimension mismatch: A is {A.shape}, estimates {est.shape}, "
                        f"replicates {reps.shape}, anchor {anc.shape}")
    return A @ est, reps @ A.T, A @ anc


def check_complete_separation(membership, atom_labels) -> tuple:
    """True iff every atom lies entirely inside or entirely outside every group.

    Returns ``(ok, violations)`` with violations as (atom, group) pairs.
    """
    M = _membership(membership)
    labels = np.asarray(atom_labels).reshape(-1)
    if labels.shape[0] != M.shape[0]:
        raise DataError("atom labels and membership disagree on n")
    violations = []
    for j in np.unique(labels):
        inside = M[labels == j]
        for k in range(M.shape[1]):
            col = inside[:, k]
            if 0 < col.sum() < col.size:
                violations.append((int(j), int(k)))
    return not violations, violations


def atom_design(data_or_y, membership, *, treatment=None, X=None, allow_background: bool = False,
                group_names=None, min_count: int = 5):
    """Dataset whose subgroup block is the atom indicators (times ``treatment`` if given).

    Returns ``(DataSet, OverlapSpec)``. With a treatment column the atom
    main effects join the covariates so the interactions carry the effects.
    """
    M = _membership(membership)
    atoms = atomize(M, allow_background=allow_background, min_count=min_count)
    A = build_A(M, atoms)
    ind = np.zeros((M.shape[0], atoms.p1))
    ind[np.arange(M.shape[0]), atoms.labels] = 1.0
    names = atoms.names(group_names)
    if isinstance(data_or_y, DataSet):
        y, Xc, xnames = data_or_y.y, data_or_y.X, list(data_or_y.names[data_or_y.p1:])
    else:
        y = np.asarray(data_or_y, dtype=float)
        Xc = np.empty((y.shape[0], 0)) if X is None else np.asarray(X, dtype=float)
        xnames = [f"x{j + 1}" for j in range(Xc.shape[1])]
    if treatment is None:
        Z = ind
        znames = [f"atom:{s}" for s in names]
        # indicators of a full partition span the intercept
        intercept = "exclude"
    else:
        t = np.asarray(treatment, dtype=float).reshape(-1)
        Z = ind * t[:, None]
        znames = [f"treat:{s}" for s in names]
        main = ind[:, 1:] if atoms.p1 > 1 else np.empty((y.shape[0], 0))
        Xc = np.hstack([main, Xc]) if Xc.size else main
        xnames = [f"atom:{s}" for s in names[1:]] + xnames
        intercept = "include_unpenalized"
    ds = DataSet(y, Z, Xc, tuple(znames + xnames), "y", intercept)
    return ds, OverlapSpec(M, atoms, A, "from_sample")
