"""Observational datasets: CSV ingestion, validation and standardization."""

from __future__ import annotations

import csv
import fnmatch
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ROLES = ("treatment", "covariate", "outcome", "ignore")


class DataError(ValueError):
    """Raised when input data violates a Dataset invariant."""


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1 and ndim == 2:
        a = a[:, None]
    if a.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Observed triplets (T, X, Y) with n rows.

    ``treatments`` is n x d_T, ``covariates`` is n x d_X and ``outcomes`` is
    an optional length-n vector. Arrays are stored read-only.
    """

    treatments: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray | None = None
    treatment_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    outcome_name: str | None = None

    def __post_init__(self):
        t = _frozen(self.treatments, 2)
        x = _frozen(self.covariates, 2)
        object.__setattr__(self, "treatments", t)
        object.__setattr__(self, "covariates", x)
        n = t.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 observations, got n={n}")
        if x.shape[0] != n:
            raise DataError(f"treatments have {n} rows but covariates have {x.shape[0]}")
        if t.shape[1] < 1:
            raise DataError("no treatment columns")
        if x.shape[1] < 1:
            raise DataError("no covariate columns")
        if self.outcomes is not None:
            y = _frozen(self.outcomes, 1)
            if y.shape[0] != n:
                raise DataError(f"outcomes have length {y.shape[0]}, expected {n}")
            object.__setattr__(self, "outcomes", y)
        for name, a in (("treatment", t), ("covariate", x), ("outcome", self.outcomes)):
            if a is not None and not np.all(np.isfinite(a)):
                r, c = np.argwhere(~np.isfinite(a.reshape(n, -1)))[0]
                raise DataError(f"non-finite {name} value at row {r + 1}, column {c + 1}")
        if not self.treatment_names:
            names = tuple(f"t{j + 1}" for j in range(t.shape[1]))
            object.__setattr__(self, "treatment_names", names)
        if not self.covariate_names:
            names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
            object.__setattr__(self, "covariate_names", names)
        if len(self.treatment_names) != t.shape[1] or len(self.covariate_names) != x.shape[1]:
            raise DataError("column names do not match array widths")

    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def d_t(self) -> int:
        return self.treatments.shape[1]

    @property
    def d_x(self) -> int:
        return self.covariates.shape[1]

    @property
    def z(self) -> np.ndarray:
        """Joint points z = (t, x), treatment coordinates first."""
        return np.hstack([self.treatments, self.covariates])

    def with_outcomes(self, y) -> "Dataset":
        return Dataset(self.treatments, self.covariates, y,
                       self.treatment_names, self.covariate_names, self.outcome_name or "y")


@dataclass(frozen=True)
class StandardizationInfo:
    t_mean: np.ndarray
    t_scale: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray

    def transform_treatments(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        return (t - self.t_mean) / self.t_scale


def _resolve_schema(header: Sequence[str], schema: Mapping[str, str]) -> dict[str, str]:
    for pattern, role in schema.items():
        if role not in ROLES:
            raise DataError(f"unknown role {role!r} for {pattern!r}; expected one of {ROLES}")
    roles = {}
    for col in header:
        # exact names win over glob patterns
        if col in schema:
            roles[col] = schema[col]
            continue
        hits = {schema[p] for p in schema if p != col and fnmatch.fnmatchcase(col, p)}
        if len(hits) > 1:
            raise DataError(f"duplicate role assignment for column {col!r}: {sorted(hits)}")
        if not hits:
            raise DataError(f"column {col!r} has no role in the schema")
        roles[col] = hits.pop()
    return roles


def load_csv(path, schema: Mapping[str, str]) -> Dataset:
    """Read a header-first numeric CSV into a Dataset.

    ``schema`` maps column names (or fnmatch patterns such as ``"x*"``) to one
    of ``treatment``, ``covariate``, ``outcome`` or ``ignore``.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        roles = _resolve_schema(header, schema)
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {r} has {len(row)} fields, expected {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                if roles[header[c]] == "ignore":
                    vals.append(0.0)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r} at row {r}, column {c + 1}") from None
                if not math.isfinite(v):
                    raise DataError(f"non-finite value at row {r}, column {c + 1}")
                vals.append(v)
            rows.append(vals)

    t_cols = [c for c in header if roles[c] == "treatment"]
    x_cols = [c for c in header if roles[c] == "covariate"]
    y_cols = [c for c in header if roles[c] == "outcome"]
    if not t_cols:
        raise DataError("no treatment columns")
    if not x_cols:
        raise DataError("no covariate columns")
    if len(y_cols) > 1:
        raise DataError(f"duplicate role assignment: several outcome columns {y_cols}")
    if len(rows) < 2:
        raise DataError(f"need at least 2 observations, got n={len(rows)}")
    a = np.array(rows, dtype=float)
    idx = {c: j for j, c in enumerate(header)}
    y = a[:, idx[y_cols[0]]] if y_cols else None
    return Dataset(a[:, [idx[c] for c in t_cols]], a[:, [idx[c] for c in x_cols]], y,
                   tuple(t_cols), tuple(x_cols), y_cols[0] if y_cols else None)


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` in the format read by :func:`load_csv` (lossless floats)."""
    header = list(data.treatment_names) + list(data.covariate_names)
    cols = [data.treatments, data.covariates]
    if data.outcomes is not None:
        header.append(data.outcome_name or "y")
        cols.append(data.outcomes[:, None])
    a = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in a:
            w.writerow([repr(float(v)) for v in row])


def schema_for(data: Dataset) -> dict[str, str]:
    schema = {c: "treatment" for c in data.treatment_names}
    schema.update({c: "covariate" for c in data.covariate_names})
    if data.outcomes is not None:
        schema[data.outcome_name or "y"] = "outcome"
    return schema


def _moments(a: np.ndarray, names) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    scale = a.std(axis=0)  # population (1/n) convention
    for j, s in enumerate(scale):
        if not s > 0:
            raise DataError(f"zero-variance column {names[j]!r}")
    return mean, scale


def standardize(data: Dataset) -> tuple[Dataset, StandardizationInfo]:
    """Center and scale every treatment and covariate column; outcomes untouched."""
    tm, ts = _moments(data.treatments, data.treatment_names)
    xm, xs = _moments(data.covariates, data.covariate_names)
    info = StandardizationInfo(tm, ts, xm, xs)
    out = Dataset((data.treatments - tm) / ts, (data.covariates - xm) / xs, data.outcomes,
                  data.treatment_names, data.covariate_names, data.outcome_name)
    return out, info


def unstandardize(data: Dataset, info: StandardizationInfo) -> Dataset:
    return Dataset(data.treatments * info.t_scale + info.t_mean,
                   data.covariates * info.x_scale + info.x_mean, data.outcomes,
                   data.treatment_names, data.covariate_names, data.outcome_name)


@dataclass(frozen=True)
class WeightSolution:
    """Weights on the simplex capped at ``cap / n`` plus solver diagnostics.

    ``ipm_value`` is the (unsquared) discrepancy reached; ``objective`` is the
    optimized criterion, e.g. IPM^2 + lambda * ||w||^2.
    """

    weights: np.ndarray
    cap: float
    ipm_value: float
    iterations: int = 0
    converged: bool = True
    objective: float = float("nan")
    history: tuple = field(default=(), repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def check(self, atol: float = 1e-9) -> None:
        """Raise AssertionError if the simplex/cap invariants are violated."""
        w, n = self.weights, self.n
        assert np.all(w >= 0), "negative weight"
        assert abs(w.sum() - 1.0) <= atol, f"weights sum to {w.sum()!r}"
        assert np.all(w <= self.cap / n + 1e-12), "weight above cap"
        assert 1 - 1e-6 <= self.ess <= n + 1e-6, "ess out of range"
