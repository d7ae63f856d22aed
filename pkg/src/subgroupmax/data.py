"""Dataset container, delimited-file ingestion and column standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

ROLES = ("response", "subgroup", "covariate", "ignore")
INTERCEPT_POLICIES = ("include_unpenalized", "exclude")
STANDARDIZE_POLICIES = ("none", "center", "center_scale")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DataSet:
    """Response ``y``, subgroup block ``Z`` (n x p1) and covariates ``X`` (n x p2).

    ``names`` labels the columns of the concatenated design ``(Z, X)``.
    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    names: tuple = ()
    response_name: str = "y"
    intercept_policy: str = "include_unpenalized"

    def __post_init__(self):
        y = _frozen(self.y).reshape(-1)
        Z = _frozen(self.Z)
        if Z.ndim == 1:
            Z = _frozen(Z.reshape(-1, 1))
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(len(y), -1)) if X.size else _frozen(np.empty((len(y), 0)))
        n = y.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        if Z.shape[0] != n or X.shape[0] != n:
            raise DataError(f"row mismatch: y has {n}, Z has {Z.shape[0]}, X has {X.shape[0]}")
        if Z.shape[1] < 1:
            raise DataError("at least one subgroup column is required")
        for label, arr in (("y", y), ("Z", Z), ("X", X)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {label}")
        names = tuple(self.names) if self.names else tuple(
            [f"z{j + 1}" for j in range(Z.shape[1])] + [f"x{j + 1}" for j in range(X.shape[1])]
        )
        if len(names) != Z.shape[1] + X.shape[1]:
            raise DataError(f"expected {Z.shape[1] + X.shape[1]} column names, got {len(names)}")
        if len(set(names)) != len(names):
            raise DataError("column labels must be unique")
        if self.intercept_policy not in INTERCEPT_POLICIES:
            raise DataError(f"unknown intercept policy {self.intercept_policy!r}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p1(self) -> int:
        return self.Z.shape[1]

    @property
    def p2(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def intercept(self) -> bool:
        return self.intercept_policy == "include_unpenalized"

    @property
    def subgroup_names(self) -> tuple:
        return self.names[: self.p1]

    @property
    def design(self) -> np.ndarray:
        """The concatenated design ``(Z, X)``."""
        return np.hstack([self.Z, self.X])

    def subset(self, rows) -> "DataSet":
        rows = np.asarray(rows)
        return DataSet(self.y[rows], self.Z[rows], self.X[rows], self.names,
                       self.response_name, self.intercept_policy)

    def with_response(self, y) -> "DataSet":
        return DataSet(y, self.Z, self.X, self.names, self.response_name, self.intercept_policy)

    def equals(self, other: "DataSet") -> bool:
        """Bit-level equality of all blocks and metadata."""
        return (
            self.names == other.names
            and self.response_name == other.response_name
            and self.intercept_policy == other.intercept_policy
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in ((self.y, other.y), (self.Z, other.Z), (self.X, other.X))
            )
        )


@dataclass(frozen=True, eq=False)
class StandardizationRecord:
    """Column means and scales applied to the design ``(Z, X)``.

    Identity entries (mean 0, scale 1) mark untouched columns.
    """

    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    policy: str = "none"
    p1: int = 0

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.means == 0.0) and np.all(self.scales == 1.0))

    def transform(self, design: np.ndarray) -> np.ndarray:
        return (np.asarray(design, dtype=float) - self.means) / self.scales

    def inverse_transform(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design, dtype=float) * self.scales + self.means

    def coefs_to_original(self, coef: np.ndarray, intercept: float = 0.0):
        """Map ``(coef, intercept)`` fitted on the standardized design back to raw columns."""
        coef = np.asarray(coef, dtype=float)
        raw = coef / self.scales
        return raw, float(intercept - raw @ self.means)

    def coefs_to_standardized(self, coef: np.ndarray, intercept: float = 0.0):
        coef = np.asarray(coef, dtype=float)
        return coef * self.scales, float(intercept + coef @ self.means)


def standardize(data: DataSet, policy: str = "center_scale", *, scale_subgroups: bool = False):
    """Center (and optionally scale) the covariate block.

    Subgroup columns are left untouched unless ``scale_subgroups`` is set, so
    that subgroup coefficients keep their treatment-effect units. Scales are
    sample standard deviations (ddof=1); constant columns are flagged and
    keep scale 1.
    """
    if policy not in STANDARDIZE_POLICIES:
        raise ValueError(f"unknown standardization policy {policy!r}")
    design = data.design
    p = design.shape[1]
    means = np.zeros(p)
    scales = np.ones(p)
    sd = design.std(axis=0, ddof=1)
    constant = sd <= 1e-12 * np.maximum(1.0, np.abs(design).max(axis=0))
    cols = np.arange(p) if scale_subgroups else np.arange(data.p1, p)
    if policy != "none":
        means[cols] = design[:, cols].mean(axis=0)
    if policy == "center_scale":
        scales[cols] = np.where(constant[cols], 1.0, sd[cols])
    means.flags.writeable = False
    scales.flags.writeable = False
    record = StandardizationRecord(means, scales, constant, policy, data.p1)
    if record.is_identity:
        return data, record
    out = record.transform(design)
    return DataSet(data.y, out[:, : data.p1], out[:, data.p1:], data.names,
                   data.response_name, data.intercept_policy), record


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric cell at ({row}, {col})") from None
    if not math.isfinite(value):
        raise DataError(f"non-numeric cell at ({row}, {col})")
    return value


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def load_dataset(path, schema: Mapping[str, str], *, intercept_policy: str = "include_unpenalized") -> DataSet:
    """Read a comma- or tab-delimited file with a header row.

    ``schema`` maps column names to roles (response, subgroup, covariate,
    ignore); blocks are assembled in schema order. Columns absent from the
    schema are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    bad = {k: v for k, v in schema.items() if v not in ROLES}
    if bad:
        raise DataError(f"unknown roles in schema: {bad}")
    response = [k for k, v in schema.items() if v == "response"]
    subgroup = [k for k, v in schema.items() if v == "subgroup"]
    covariate = [k for k, v in schema.items() if v == "covariate"]
    if len(response) != 1:
        raise DataError(f"schema must assign exactly one response column, got {len(response)}")
    if not subgroup:
        raise DataError("schema assigns zero subgroup columns")

    with path.open(newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        reader = csv.reader(fh, delimiter=_sniff_delimiter(first))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        index = {name: i for i, name in enumerate(header)}
        missing = [c for c in response + subgroup + covariate if c not in index]
        if missing:
            raise DataError(f"columns not found in header: {missing}")
        used = response + subgroup + covariate
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"row {r} has {len(record)} fields, expected {len(header)}")
            rows.append([_parse_cell(record[index[c]].strip(), r, c) for c in used])
    if not rows:
        raise DataError("no data rows")
    values = np.array(rows, dtype=np.float64)
    k1 = 1 + len(subgroup)
    return DataSet(values[:, 0], values[:, 1:k1], values[:, k1:], tuple(subgroup + covariate),
                   response[0], intercept_policy)


def write_dataset(data: DataSet, path, *, delimiter: str = ",") -> dict:
    """Write ``data`` so that :func:`load_dataset` recovers it bit-for-bit.

    Returns the schema needed to read the file back.
    """
    path = Path(path)
    header = [data.response_name, *data.names]
    block = np.column_stack([data.y, data.Z, data.X])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for row in block:
            writer.writerow([repr(float(v)) for v in row])
    schema = {data.response_name: "response"}
    schema.update({name: "subgroup" for name in data.subgroup_names})
    schema.update({name: "covariate" for name in data.names[data.p1:]})
    return schema


def parse_schema(text: str) -> dict:
    """Parse ``name=role`` pairs separated by commas or newlines."""
    schema = {}
    for part in text.replace("\n", ",").split(","):
        part = part.strip()
        if not part or part.startswith("#"):
            continue
        if "=" not in part:
            raise DataError(f"schema entry {part!r} is not name=role")
        name, role = (s.strip() for s in part.split("=", 1))
        if name in schema:
            raise DataError(f"column {name!r} assigned twice")
        schema[name] = role
    return schema


def schema_from_prefixes(header: Sequence[str], response: str, subgroup_prefix: str = "z",
                         covariate_prefix: str = "x") -> dict:
    schema = {}
    for name in header:
        if name == response:
            schema[name] = "response"
        elif name.startswith(subgroup_prefix):
            schema[name] = "subgroup"
        elif name.startswith(covariate_prefix):
            schema[name] = "covariate"
        else:
            schema[name] = "ignore"
    return schema
