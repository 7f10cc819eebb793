import numpy as np
import pandas as pd
import pytest
import yaml

from decision_sparsity.preprocessing import Dataset, encode_and_standardize, load_csv, prepare


def write_dataset(tmp_path, frame, schema_dict, stem="data"):
    csv = tmp_path / f"{stem}.csv"
    frame.to_csv(csv, index=False)
    sp = tmp_path / f"{stem}.schema.yaml"
    sp.write_text(yaml.safe_dump(schema_dict, sort_keys=False))
    return csv, sp


def toy_frame(seed=0, n=300):
    """Small mixed-type table with a learnable signal."""
    rng = np.random.default_rng(seed)
    age = rng.normal(35, 10, n).round(1)
    priors = rng.poisson(2.0, n).astype(float)
    sex = rng.choice(["Male", "Female"], n, p=[0.8, 0.2])
    charge = rng.choice(["F", "M"], n, p=[0.6, 0.4])
    housing = rng.choice(["own", "rent", "free"], n, p=[0.5, 0.3, 0.2])
    z = 0.08 * (age - 35) + 0.5 * (priors - 2) + 0.4 * (sex == "Male") - 0.3 * (charge == "M")
    y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(int)
    frame = pd.DataFrame({"age": age, "priors": priors, "sex": sex,
                          "charge": charge, "housing": housing, "label": y})
    return frame


TOY_SCHEMA = {"label": "label", "features": [
    {"name": "age", "kind": "numeric"},
    {"name": "priors", "kind": "numeric"},
    {"name": "sex", "kind": "binary", "levels": ["Female", "Male"]},
    {"name": "charge", "kind": "binary", "levels": ["F", "M"]},
    {"name": "housing", "kind": "categorical", "levels": ["own", "rent", "free"]},
]}


@pytest.fixture(scope="session")
def toy_splits(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("toy")
    csv, sp = write_dataset(tmp, toy_frame(), TOY_SCHEMA)
    ds = load_csv(csv, sp)
    return prepare(ds, test_fraction=0.2, seed=7)


@pytest.fixture(scope="session")
def compas_splits():
    from decision_sparsity.datasets import load_compas

    return prepare(load_compas(), test_fraction=0.2, seed=7)


@pytest.fixture(scope="session")
def german_splits():
    from decision_sparsity.datasets import load_german_credit

    return prepare(load_german_credit(), test_fraction=0.2, seed=7)


def random_numeric_dataset(seed, n=120, d=4, flip=0.15):
    """Gaussian features, noisy random-plane labels, pre-encoded numeric schema.

    flip keeps the classes overlapping so unregularized logistic losses have a
    finite minimizer.
    """
    from decision_sparsity.preprocessing import Feature, FeatureSchema

    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n, d))
    w = rng.normal(0, 1.5, d)
    y = (X @ w + 0.3 * rng.normal(0, 1, n) > 0).astype(np.int8)
    flips = rng.random(n) < flip
    y = np.where(flips, 1 - y, y).astype(np.int8)
    feats = [Feature(f"x{j}", "numeric") for j in range(d)]
    frame = pd.DataFrame({f"x{j}": X[:, j] for j in range(d)})
    schema = FeatureSchema(features=feats, label="y")
    ds = Dataset(frame, y, schema, role="full")
    return encode_and_standardize(ds)
