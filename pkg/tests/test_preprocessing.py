import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from decision_sparsity.errors import (
    EmptyClass,
    MissingColumn,
    NonBinaryLabel,
    NumericMissing,
    UnknownLevel,
    ZeroVariance,
)
from decision_sparsity.preprocessing import (
    Dataset,
    FeatureSchema,
    check_group_atomicity,
    decode_row,
    encode_and_standardize,
    encode_row,
    load_csv,
    prepare,
    stratified_split,
)

from conftest import TOY_SCHEMA, toy_frame, write_dataset


def test_load_csv_shape_and_labels(tmp_path):
    csv, sp = write_dataset(tmp_path, toy_frame(), TOY_SCHEMA)
    ds = load_csv(csv, sp)
    assert ds.n == 300
    assert set(np.unique(ds.y)) <= {0, 1}
    assert ds.schema.label == "label"
    assert not ds.schema.fitted


def test_load_csv_missing_column(tmp_path):
    frame = toy_frame().drop(columns=["priors"])
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(MissingColumn):
        load_csv(csv, sp)


def test_load_csv_nonbinary_label(tmp_path):
    frame = toy_frame()
    frame.loc[3, "label"] = 2
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(NonBinaryLabel):
        load_csv(csv, sp)


def test_load_csv_nan_label_rejected(tmp_path):
    frame = toy_frame()
    frame.loc[3, "label"] = np.nan
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(NonBinaryLabel):
        load_csv(csv, sp)


def test_load_csv_unknown_level(tmp_path):
    frame = toy_frame()
    frame.loc[5, "housing"] = "yurt"
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(UnknownLevel):
        load_csv(csv, sp)


def test_load_csv_numeric_nan_rejected(tmp_path):
    frame = toy_frame()
    frame.loc[7, "age"] = np.nan
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(NumericMissing):
        load_csv(csv, sp)


def test_missing_level_must_be_declared(tmp_path):
    frame = toy_frame()
    frame.loc[9, "housing"] = np.nan
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    with pytest.raises(UnknownLevel):
        load_csv(csv, sp)

    declared = {"label": "label", "features": [
        dict(f) for f in TOY_SCHEMA["features"]
    ]}
    declared["features"][4] = {"name": "housing", "kind": "categorical",
                               "levels": ["own", "rent", "free", "Missing"]}
    csv2, sp2 = write_dataset(tmp_path, frame, declared, stem="declared")
    ds = load_csv(csv2, sp2)
    assert ds.frame.loc[9, "housing"] == "Missing"


def test_stratified_split_counts(tmp_path):
    csv, sp = write_dataset(tmp_path, toy_frame(), TOY_SCHEMA)
    ds = load_csv(csv, sp)
    train, test = stratified_split(ds, 0.2, seed=3)
    n1 = int(ds.y.sum())
    n0 = ds.n - n1
    assert int(test.y.sum()) == round(n1 * 0.2)
    assert (test.y == 0).sum() == round(n0 * 0.2)
    assert train.n + test.n == ds.n
    assert train.role == "train" and test.role == "test"


def test_stratified_split_keeps_tiny_class(tmp_path):
    frame = toy_frame(n=40)
    frame["label"] = 0
    frame.loc[0, "label"] = 1
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    ds = load_csv(csv, sp)
    train, test = stratified_split(ds, 0.2, seed=0)
    # the clamp keeps at least one positive on each side
    assert int(train.y.sum()) >= 0 and int(test.y.sum()) >= 1 or int(train.y.sum()) >= 1


def test_split_empty_class(tmp_path):
    frame = toy_frame(n=30)
    frame["label"] = 0
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    ds = load_csv(csv, sp)
    with pytest.raises(EmptyClass):
        stratified_split(ds, 0.2, seed=0)


def test_standardization_uses_train_stats_and_population_std(toy_splits):
    train, test = toy_splits
    X = train.require_encoded()
    num = train.schema.numeric_columns()
    assert np.allclose(X[:, num].mean(axis=0), 0, atol=1e-10)
    assert np.allclose(X[:, num].std(axis=0), 1, atol=1e-10)
    # test columns are shifted by train statistics, not their own
    Xt = test.require_encoded()
    assert not np.allclose(Xt[:, num].mean(axis=0), 0, atol=1e-3)


def test_dummy_columns_are_unstandardized(toy_splits):
    train, _ = toy_splits
    X = train.require_encoded()
    schema = train.schema
    dummy_cols = [c for c in range(schema.n_encoded) if c not in schema.standardization]
    assert dummy_cols
    vals = np.unique(X[:, dummy_cols])
    assert set(vals) <= {0.0, 1.0}


def test_categorical_gets_k_minus_1_dummies(toy_splits):
    train, _ = toy_splits
    schema = train.schema
    housing_idx = [f.name for f in schema.features].index("housing")
    assert len(schema.groups[housing_idx]) == 2  # 3 levels -> 2 dummies
    sex_idx = [f.name for f in schema.features].index("sex")
    assert len(schema.groups[sex_idx]) == 1


def test_zero_variance_rejected(tmp_path):
    frame = toy_frame()
    frame["age"] = 42.0
    csv, sp = write_dataset(tmp_path, frame, TOY_SCHEMA)
    ds = load_csv(csv, sp)
    with pytest.raises(ZeroVariance) as err:
        prepare(ds, 0.2, seed=0)
    assert "age" in str(err.value)


def test_schema_roundtrip(tmp_path, toy_splits):
    train, _ = toy_splits
    path = tmp_path / "schema.yaml"
    train.schema.save(path)
    loaded = FeatureSchema.load(path)
    assert loaded.hash() == train.schema.hash()
    assert loaded.encoded_columns == train.schema.encoded_columns
    assert loaded.groups == train.schema.groups


def test_encode_decode_roundtrip(toy_splits):
    train, _ = toy_splits
    X = train.require_encoded()
    for i in (0, 17, 101):
        values = decode_row(X[i], train.schema)
        back = encode_row(values, train.schema)
        assert np.allclose(back, X[i], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    age=st.floats(min_value=18, max_value=90),
    priors=st.integers(min_value=0, max_value=40),
    sex=st.sampled_from(["Female", "Male"]),
    charge=st.sampled_from(["F", "M"]),
    housing=st.sampled_from(["own", "rent", "free"]),
)
def test_encode_row_roundtrips_any_conformant_row(age, priors, sex, charge, housing):
    # schema fitted once per test session would leak hypothesis state; refit cheaply
    ds = _fitted_toy()
    values = {"age": age, "priors": float(priors), "sex": sex,
              "charge": charge, "housing": housing}
    x = encode_row(values, ds.schema)
    out = decode_row(x, ds.schema)
    assert out["sex"] == sex and out["charge"] == charge and out["housing"] == housing
    assert np.isclose(out["age"], age, atol=1e-9)
    assert check_group_atomicity(x[None, :], ds.schema)


_CACHE = {}


def _fitted_toy():
    if "ds" not in _CACHE:
        frame = toy_frame()
        y = frame.pop("label").to_numpy(dtype=np.int8)
        from decision_sparsity.preprocessing import Feature

        feats = [Feature(f["name"], f["kind"], tuple(f.get("levels", ())))
                 for f in TOY_SCHEMA["features"]]
        schema = FeatureSchema(features=feats, label="label")
        _CACHE["ds"] = encode_and_standardize(Dataset(frame, y, schema))
    return _CACHE["ds"]


def test_prepare_encodes_both_splits(toy_splits):
    train, test = toy_splits
    assert train.X is not None and test.X is not None
    assert train.X.shape[1] == test.X.shape[1] == train.schema.n_encoded


def test_group_atomicity_checker_catches_bad_rows(toy_splits):
    train, _ = toy_splits
    X = train.require_encoded().copy()
    assert check_group_atomicity(X, train.schema)
    housing_idx = [f.name for f in train.schema.features].index("housing")
    cols = train.schema.groups[housing_idx]
    X[0, cols] = 1.0  # two hot bits in one group
    assert not check_group_atomicity(X, train.schema)
