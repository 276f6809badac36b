"""Tabular dataset container, CSV ingestion and preprocessing.

Every operation returns a new :class:`Dataset`; arrays held by a dataset are
marked read-only so instances can be shared between workers.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, BINARY, CATEGORICAL)
TRANSFORMS = ("none", "log", "log1p")


class DataError(ValueError):
    """Raised for malformed input data or an invalid preprocessing request."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = CONTINUOUS
    ohe_group: Optional[str] = None
    transform: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.transform not in TRANSFORMS:
            raise DataError(f"column {self.name!r}: unknown transform {self.transform!r}")
        if self.ohe_group is not None and self.kind != BINARY:
            raise DataError(f"column {self.name!r}: one-hot group members must be binary")

    @property
    def is_binary(self) -> bool:
        return self.kind == BINARY


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, target and per-column metadata.

    ``missing_mask`` is authoritative: masked cells hold NaN until
    :func:`impute_mean` fills them, after which the mask still records which
    cells were imputed.
    """

    features: np.ndarray
    target: np.ndarray
    specs: tuple
    missing_mask: Optional[np.ndarray] = None
    standardization_params: Optional[dict] = None
    target_name: str = "y"
    binning: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n, p = X.shape
        if n < 1 or p < 1:
            raise DataError("dataset needs at least one row and one column")
        if y.shape != (n,):
            raise DataError(f"target length {y.shape} does not match {n} rows")
        specs = tuple(self.specs)
        if len(specs) != p:
            raise DataError(f"{len(specs)} variable specs for {p} columns")
        names = [s.name for s in specs]
        if len(set(names)) != p:
            raise DataError("duplicate column names")
        mask = np.isnan(X) if self.missing_mask is None else np.asarray(self.missing_mask, dtype=bool)
        if mask.shape != X.shape:
            raise DataError("missing_mask shape does not match features")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "target", _frozen(y))
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "missing_mask", _frozen(mask))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def names(self) -> list:
        return [s.name for s in self.specs]

    def col(self, name: str) -> int:
        for i, s in enumerate(self.specs):
            if s.name == name:
                return i
        raise DataError(f"unknown column {name!r}")

    def spec(self, name: str) -> VariableSpec:
        return self.specs[self.col(name)]

    def ohe_groups(self) -> dict:
        """Map each one-hot group name to its member column indices, in column order."""
        groups: dict = {}
        for i, s in enumerate(self.specs):
            if s.ohe_group is not None:
                groups.setdefault(s.ohe_group, []).append(i)
        return groups

    def has_missing(self) -> bool:
        return bool(np.isnan(self.features).any())

    def with_values(self, features=None, target=None, **changes) -> "Dataset":
        return replace(
            self,
            features=self.features if features is None else features,
            target=self.target if target is None else target,
            **changes,
        )

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            features=self.features[rows],
            target=self.target[rows],
            missing_mask=self.missing_mask[rows],
        )


def validate_ohe_groups(d: Dataset) -> None:
    for group, cols in d.ohe_groups().items():
        block = d.features[:, cols]
        ok = ~np.isnan(block).any(axis=1)
        sums = block[ok].sum(axis=1)
        bad = np.flatnonzero(sums != 1.0)
        if bad.size:
            row = int(np.flatnonzero(ok)[bad[0]])
            raise DataError(
                f"one-hot group {group!r}: row {row} sums to {sums[bad[0]]:g}, expected exactly 1"
            )


# --------------------------------------------------------------------------- I/O

def read_spec(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not doc:
        raise DataError(f"{path}: spec must be a JSON object mapping column names to entries")
    targets = [name for name, e in doc.items() if e.get("role", "feature") == "target"]
    if len(targets) != 1:
        raise DataError(f"{path}: spec must designate exactly one target column, found {len(targets)}")
    for name, e in doc.items():
        if e.get("role", "feature") not in ("feature", "target"):
            raise DataError(f"column {name!r}: role must be 'feature' or 'target'")
    return doc


def _parse_float(cell: str, name: str, lineno: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric value {cell!r} in column {name!r}") from None
    if math.isnan(v):
        raise DataError(f"line {lineno}: literal NaN in column {name!r}; use an empty field for missing")
    return v


def load_csv(path, spec_path) -> Dataset:
    """Read a header-first CSV using the column spec at ``spec_path``.

    Empty fields are missing values. Categorical columns are expanded to a
    one-hot group named after the column, one binary column per observed level
    (``<column>_<level>``, levels in sorted order).
    """
    spec = read_spec(spec_path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: malformed CSV: {exc}") from None
        header = [h.strip() for h in header]
        try:
            rows = [r for r in reader]
        except csv.Error as exc:
            raise DataError(f"{path}: malformed CSV at line {reader.line_num}: {exc}") from None

    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    unknown = [c for c in spec if c not in header]
    if unknown:
        raise DataError(f"spec names column(s) absent from the CSV: {unknown}")
    undeclared = [c for c in header if c not in spec]
    if undeclared:
        raise DataError(f"CSV column(s) not named in the spec: {undeclared}")
    rows = [r for r in rows if r]  # tolerate a trailing blank line
    if not rows:
        raise DataError(f"{path}: no data rows")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: line {i + 2} has {len(r)} fields, header has {len(header)}")

    target_name = next(c for c in header if spec[c].get("role") == "target")
    ti = header.index(target_name)
    target = []
    for i, r in enumerate(rows):
        cell = r[ti].strip()
        if cell == "":
            raise DataError(f"line {i + 2}: missing target value (target missingness is not imputed)")
        target.append(_parse_float(cell, target_name, i + 2))

    columns, specs = [], []
    for ci, name in enumerate(header):
        if ci == ti:
            continue
        entry = spec[name]
        kind = entry.get("kind", CONTINUOUS)
        raw = [r[ci].strip() for r in rows]
        if kind == CATEGORICAL:
            if any(c == "" for c in raw):
                raise DataError(f"column {name!r}: missing values are not supported in categorical columns")
            if entry.get("transform", "none") != "none":
                raise DataError(f"column {name!r}: transforms do not apply to categorical columns")
            for level in sorted(set(raw)):
                columns.append([1.0 if c == level else 0.0 for c in raw])
                specs.append(VariableSpec(f"{name}_{level}", BINARY, ohe_group=name))
            continue
        values = [math.nan if c == "" else _parse_float(c, name, i + 2) for i, c in enumerate(raw)]
        vs = VariableSpec(name, kind, entry.get("ohe_group"), entry.get("transform", "none"))
        if kind == BINARY:
            bad = [v for v in values if not math.isnan(v) and v not in (0.0, 1.0)]
            if bad:
                raise DataError(f"binary column {name!r} contains value {bad[0]:g} outside {{0, 1}}")
        columns.append(values)
        specs.append(vs)

    X = np.array(columns, dtype=float).T
    d = Dataset(X, np.array(target), tuple(specs), np.isnan(X), target_name=target_name)
    validate_ohe_groups(d)
    return d


def write_csv(d: Dataset, path) -> None:
    """Write features and target with full float precision; missing cells become empty fields."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.names + [d.target_name])
        for row, miss, t in zip(d.features, d.missing_mask, d.target):
            w.writerow(["" if m else repr(float(v)) for v, m in zip(row, miss)] + [repr(float(t))])


def write_spec(d: Dataset, path) -> None:
    doc = {}
    for s in d.specs:
        entry = {"kind": s.kind, "role": "feature"}
        if s.ohe_group is not None:
            entry["ohe_group"] = s.ohe_group
        if s.transform != "none":
            entry["transform"] = s.transform
        doc[s.name] = entry
    doc[d.target_name] = {"kind": CONTINUOUS, "role": "target"}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ preprocessing

def impute_mean(d: Dataset) -> Dataset:
    X = np.array(d.features)
    holes = np.isnan(X)
    if not holes.any():
        return d
    for j in np.flatnonzero(holes.any(axis=0)):
        present = X[~holes[:, j], j]
        if present.size == 0:
            raise DataError(f"column {d.specs[j].name!r} is entirely missing; no mean exists")
        X[holes[:, j], j] = present.mean()
    return d.with_values(features=X)


def bin_continuous(d: Dataset, column: str, k: int) -> Dataset:
    """Replace ``column`` by the midpoints of ``k`` equal-width bins over its observed range.

    The range is recorded, so re-binning the output with the same ``k`` is a no-op.
    """
    j = d.col(column)
    if d.specs[j].kind != CONTINUOUS:
        raise DataError(f"column {column!r} is not continuous")
    if k < 2:
        raise DataError("bin count k must be at least 2")
    x = d.features[:, j]
    present = x[~np.isnan(x)]
    if present.size == 0:
        raise DataError(f"column {column!r} has no observed values")
    if column in d.binning and d.binning[column][2] == k:
        lo, hi, _ = d.binning[column]
    else:
        lo, hi = float(present.min()), float(present.max())
    if not hi > lo:
        raise DataError(f"column {column!r} is constant; cannot bin a zero-width range")
    width = (hi - lo) / k
    idx = np.clip(np.floor((x - lo) / width), 0, k - 1)
    binned = np.where(np.isnan(x), np.nan, lo + (idx + 0.5) * width)
    X = np.array(d.features)
    X[:, j] = binned
    return d.with_values(features=X, binning={**d.binning, column: (lo, hi, k)})


def standardize(d: Dataset, target: bool = False) -> Dataset:
    """Shift and scale every non-binary column to mean 0 and population variance 1.

    Recorded parameters compose with any earlier standardization, so they
    always map the current values back to the original scale. The target is
    only standardized when ``target`` is true (its parameters are stored
    under the target's name).
    """
    if d.has_missing():
        raise DataError("standardize requires complete data; impute first")
    X = np.array(d.features)
    params = dict(d.standardization_params or {})
    for j, s in enumerate(d.specs):
        if s.is_binary:
            continue
        mu, sd = X[:, j].mean(), X[:, j].std()
        if not sd > 0:
            raise DataError(f"column {s.name!r} has zero variance; cannot standardize")
        X[:, j] = (X[:, j] - mu) / sd
        m0, s0 = params.get(s.name, (0.0, 1.0))
        params[s.name] = (m0 + s0 * mu, s0 * sd)
    y = d.target
    if target:
        mu, sd = y.mean(), y.std()
        if not sd > 0:
            raise DataError("target has zero variance; cannot standardize")
        y = (y - mu) / sd
        m0, s0 = params.get(d.target_name, (0.0, 1.0))
        params[d.target_name] = (m0 + s0 * mu, s0 * sd)
    return d.with_values(features=X, target=y, standardization_params=params)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int


def split(d: Dataset, test_fraction: float, seed: int) -> SplitIndices:
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie strictly between 0 and 1")
    n = d.n
    if n < 2:
        raise DataError("need at least two rows to split")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise DataError(f"test_fraction {test_fraction} leaves an empty train or test set for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(np.sort(perm[n_test:]), np.sort(perm[:n_test]), seed)


def apply_transform(d: Dataset, column: str) -> Dataset:
    j = d.col(column)
    s = d.specs[j]
    if s.transform == "none":
        return d
    x = d.features[:, j]
    seen = x[~np.isnan(x)]
    if s.transform == "log":
        if (seen <= 0).any():
            raise DataError(f"log transform of column {column!r} needs strictly positive values")
        out = np.log(x)
    else:
        if (seen < 0).any():
            raise DataError(f"log1p transform of column {column!r} needs nonnegative values")
        out = np.log1p(x)
    X = np.array(d.features)
    X[:, j] = out
    specs = list(d.specs)
    specs[j] = replace(s, transform="none")
    return d.with_values(features=X, specs=tuple(specs))


def apply_transforms(d: Dataset) -> Dataset:
    for s in d.specs:
        if s.transform != "none":
            d = apply_transform(d, s.name)
    return d


def from_arrays(X, y, names: Optional[Sequence[str]] = None, kinds: Optional[Iterable[str]] = None,
                ohe_groups: Optional[dict] = None, target_name: str = "y") -> Dataset:
    """Build a dataset from plain arrays; ``ohe_groups`` maps group name to member columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])]
    kinds = list(kinds) if kinds is not None else [CONTINUOUS] * len(names)
    member = {c: g for g, cols in (ohe_groups or {}).items() for c in cols}
    specs = tuple(VariableSpec(nm, BINARY if nm in member else kd, member.get(nm))
                  for nm, kd in zip(names, kinds))
    d = Dataset(X, np.asarray(y, dtype=float), specs, target_name=target_name)
    validate_ohe_groups(d)
    return d
