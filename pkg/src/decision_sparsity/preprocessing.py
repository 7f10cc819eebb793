"""Tabular ingestion and encoding.

The pipeline is: load a CSV against a declared schema, split it, then encode
(train statistics only).  Encoding follows the usual recipe for sparse
explanation work: numeric columns standardized to mean 0 / variance 1
(population variance), categorical features expanded to k-1 dummy columns
(first level is the all-zeros reference level), binary features to a single
dummy.  The schema keeps the mapping from every encoded column back to its
original feature so one-hot groups can move as a unit downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .errors import (
    DataError,
    EmptyClass,
    MissingColumn,
    NonBinaryLabel,
    NumericMissing,
    UnknownLevel,
    ZeroVariance,
)

MISSING_LEVEL = "Missing"

NUMERIC = "numeric"
BINARY = "binary"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # numeric | binary | categorical
    levels: tuple[str, ...] = ()  # ordered; first level encodes to all zeros

    def __post_init__(self):
        if self.kind not in (NUMERIC, BINARY, CATEGORICAL):
            raise DataError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == NUMERIC and self.levels:
            raise DataError(f"numeric feature {self.name!r} must not declare levels")
        if self.kind == BINARY and len(self.levels) != 2:
            raise DataError(f"binary feature {self.name!r} needs exactly 2 levels")
        if self.kind == CATEGORICAL and len(self.levels) < 2:
            raise DataError(f"categorical feature {self.name!r} needs >= 2 levels")


@dataclass
class FeatureSchema:
    """Feature declarations plus, once fitted, the encoded-column structure.

    groups[j] lists the encoded column indices belonging to original feature
    j.  standardization maps encoded column index -> (mean, stddev) for
    numeric columns only; dummies are left as 0/1.
    """

    features: list[Feature]
    label: str
    groups: list[list[int]] = field(default_factory=list)
    encoded_columns: list[str] = field(default_factory=list)
    standardization: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def fitted(self) -> bool:
        return bool(self.groups)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_encoded(self) -> int:
        return len(self.encoded_columns)

    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def column_feature(self) -> np.ndarray:
        """Array of length d mapping each encoded column to its feature index."""
        out = np.empty(self.n_encoded, dtype=np.intp)
        for j, cols in enumerate(self.groups):
            for c in cols:
                out[c] = j
        return out

    def numeric_columns(self) -> list[int]:
        return [
            self.groups[j][0]
            for j, f in enumerate(self.features)
            if f.kind == NUMERIC
        ]

    def validate(self) -> None:
        if not self.fitted:
            return
        seen = sorted(c for cols in self.groups for c in cols)
        if seen != list(range(self.n_encoded)):
            raise DataError("every encoded column must belong to exactly one group")
        for j, f in enumerate(self.features):
            want = {NUMERIC: 1, BINARY: 1}.get(f.kind, len(f.levels) - 1)
            if len(self.groups[j]) != want:
                raise DataError(
                    f"feature {f.name!r}: expected {want} encoded columns, "
                    f"got {len(self.groups[j])}"
                )
        for c, (_, sd) in self.standardization.items():
            if not sd > 0:
                raise ZeroVariance(self.encoded_columns[c])

    # persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "features": [
                {"name": f.name, "kind": f.kind, **({"levels": list(f.levels)} if f.levels else {})}
                for f in self.features
            ],
        }
        if self.fitted:
            out["encoded"] = {
                "columns": list(self.encoded_columns),
                "groups": [list(g) for g in self.groups],
                "standardization": {
                    str(c): [float(m), float(s)]
                    for c, (m, s) in sorted(self.standardization.items())
                },
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        feats = [
            Feature(f["name"], f["kind"], tuple(f.get("levels", ())))
            for f in d["features"]
        ]
        schema = cls(features=feats, label=d["label"])
        enc = d.get("encoded")
        if enc:
            schema.encoded_columns = list(enc["columns"])
            schema.groups = [list(g) for g in enc["groups"]]
            schema.standardization = {
                int(c): (float(m), float(s))
                for c, (m, s) in enc["standardization"].items()
            }
            schema.validate()
        return schema

    def save(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def hash(self) -> str:
        """Stable digest of the fitted encoding; guards model/schema pairing."""
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class Dataset:
    """Rows plus labels.  `frame` always holds the raw values; `X` is filled
    by :func:`encode_and_standardize` and is None before that."""

    frame: pd.DataFrame
    y: np.ndarray
    schema: FeatureSchema
    role: str = "full"
    X: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def encoded(self) -> bool:
        return self.X is not None

    def require_encoded(self) -> np.ndarray:
        if self.X is None:
            raise DataError("dataset is not encoded yet")
        return self.X

    def subset(self, idx: np.ndarray, role: str | None = None) -> "Dataset":
        return Dataset(
            frame=self.frame.iloc[idx].reset_index(drop=True),
            y=self.y[idx],
            schema=self.schema,
            role=role or self.role,
            X=None if self.X is None else self.X[idx],
        )

    def negatives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.y == 0))

    def positives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.y == 1))


def load_csv(path, schema_path) -> Dataset:
    """Read a CSV against a schema declaration.  Returns an un-encoded dataset.

    Unknown categorical levels and non-binary labels are rejected outright;
    missing categorical cells map to the 'Missing' level only when the schema
    declares one.
    """
    schema = FeatureSchema.load(schema_path)
    frame = pd.read_csv(path)

    missing = [f.name for f in schema.features if f.name not in frame.columns]
    if schema.label not in frame.columns:
        missing.append(schema.label)
    if missing:
        raise MissingColumn(f"CSV lacks columns: {missing}")

    raw_y = frame[schema.label]
    if raw_y.isna().any():
        raise NonBinaryLabel("label column has missing values")
    y_num = pd.to_numeric(raw_y, errors="coerce")
    if y_num.isna().any() or not y_num.isin([0, 1]).all():
        bad = raw_y[~y_num.isin([0, 1])].iloc[0]
        bad = bad.item() if hasattr(bad, "item") else bad
        raise NonBinaryLabel(f"labels must be 0/1, saw {bad!r}")
    y = y_num.to_numpy(dtype=np.int8)

    cols = {}
    for f in schema.features:
        col = frame[f.name]
        if f.kind == NUMERIC:
            vals = pd.to_numeric(col, errors="coerce")
            if vals.isna().any():
                if col.isna().any():
                    raise NumericMissing(f"numeric feature {f.name!r} has missing values")
                raise DataError(f"numeric feature {f.name!r} has non-numeric values")
            cols[f.name] = vals.astype(float)
        else:
            vals = col.astype(object).where(col.notna(), MISSING_LEVEL).astype(str)
            known = set(f.levels)
            if MISSING_LEVEL not in known and col.isna().any():
                raise UnknownLevel(
                    f"feature {f.name!r} has missing values but no {MISSING_LEVEL!r} level"
                )
            unknown = set(vals.unique()) - known
            if unknown:
                raise UnknownLevel(f"feature {f.name!r}: unknown levels {sorted(unknown)}")
            cols[f.name] = vals

    clean = pd.DataFrame(cols, columns=[f.name for f in schema.features])
    return Dataset(frame=clean, y=y, schema=schema, role="full")


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic stratified split; per-class test counts are round(n_c * fraction)."""
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls in (0, 1):
        members = np.flatnonzero(dataset.y == cls)
        if members.size == 0:
            raise EmptyClass(f"class {cls} absent; cannot stratify")
        n_test = int(round(members.size * test_fraction))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = rng.permutation(members.size)
        test_idx.append(members[perm[:n_test]])
    test = np.sort(np.concatenate(test_idx))
    mask = np.ones(dataset.n, dtype=bool)
    mask[test] = False
    train = np.flatnonzero(mask)
    return dataset.subset(train, role="train"), dataset.subset(test, role="test")


def _fit_schema(dataset: Dataset) -> FeatureSchema:
    schema = FeatureSchema(features=list(dataset.schema.features), label=dataset.schema.label)
    cols: list[str] = []
    groups: list[list[int]] = []
    standardization: dict[int, tuple[float, float]] = {}
    for f in schema.features:
        start = len(cols)
        if f.kind == NUMERIC:
            v = dataset.frame[f.name].to_numpy(dtype=float)
            mean = float(v.mean())
            sd = float(v.std())  # population stddev
            if sd <= 0:
                raise ZeroVariance(f.name)
            standardization[start] = (mean, sd)
            cols.append(f.name)
        else:
            for lvl in f.levels[1:]:
                cols.append(f"{f.name}={lvl}")
        groups.append(list(range(start, len(cols))))
    schema.encoded_columns = cols
    schema.groups = groups
    schema.standardization = standardization
    schema.validate()
    return schema


def _encode_frame(frame: pd.DataFrame, schema: FeatureSchema) -> np.ndarray:
    X = np.zeros((len(frame), schema.n_encoded), dtype=float)
    for j, f in enumerate(schema.features):
        cols = schema.groups[j]
        if f.kind == NUMERIC:
            c = cols[0]
            mean, sd = schema.standardization[c]
            X[:, c] = (frame[f.name].to_numpy(dtype=float) - mean) / sd
        else:
            vals = frame[f.name].to_numpy(dtype=object)
            for k, lvl in enumerate(f.levels[1:]):
                X[vals == lvl, cols[k]] = 1.0
            known = np.isin(vals.astype(str), np.asarray(f.levels, dtype=str))
            if not known.all():
                bad = sorted(set(vals[~known].astype(str)))
                raise UnknownLevel(f"feature {f.name!r}: unknown levels {bad}")
    if not np.isfinite(X).all():
        raise DataError("non-finite values after encoding")
    return X


def encode_and_standardize(dataset: Dataset, fitted: FeatureSchema | None = None) -> Dataset:
    """Encode a dataset.  With `fitted` given, apply those statistics (the
    test-split path); otherwise fit means/stddevs on this data."""
    schema = fitted if fitted is not None else _fit_schema(dataset)
    if not schema.fitted:
        raise DataError("fitted schema required")
    X = _encode_frame(dataset.frame, schema)
    return Dataset(frame=dataset.frame, y=dataset.y, schema=schema, role=dataset.role, X=X)


def prepare(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split then encode, fitting statistics on the train split only."""
    train_raw, test_raw = stratified_split(dataset, test_fraction, seed)
    train = encode_and_standardize(train_raw)
    test = encode_and_standardize(test_raw, fitted=train.schema)
    return train, test


def decode_row(x: np.ndarray, schema: FeatureSchema) -> dict[str, object]:
    """Encoded vector -> {feature name: original value}.

    Numeric values are de-standardized.  A dummy block decodes to the level
    whose column is the largest; the all-zeros block is the first level.
    """
    out: dict[str, object] = {}
    for j, f in enumerate(schema.features):
        cols = schema.groups[j]
        if f.kind == NUMERIC:
            mean, sd = schema.standardization[cols[0]]
            out[f.name] = float(x[cols[0]] * sd + mean)
        else:
            block = np.asarray([x[c] for c in cols], dtype=float)
            if block.max(initial=0.0) <= 0.5:
                out[f.name] = f.levels[0]
            else:
                out[f.name] = f.levels[1 + int(np.argmax(block))]
    return out


def encode_row(values: dict[str, object], schema: FeatureSchema) -> np.ndarray:
    """Inverse of :func:`decode_row` for a single row of raw values."""
    frame = pd.DataFrame([values])
    return _encode_frame(frame, schema)[0]


def check_group_atomicity(X: np.ndarray, schema: FeatureSchema, tol: float = 1e-9) -> bool:
    """True when every one-hot group has at most one active column per row."""
    X2 = np.atleast_2d(X)
    for j, f in enumerate(schema.features):
        if f.kind == NUMERIC:
            continue
        block = X2[:, schema.groups[j]]
        if ((block > tol).sum(axis=1) > 1).any():
            return False
        if (np.abs(block - np.round(block)) > tol).any():
            return False
    return True
