"""Bundled example datasets.

Both CSVs are synthetic regenerations with the same shape, column types, and
headline statistics as the widely used recidivism and credit-scoring tables;
see tools/regen_datasets.py in the repository for the generator.  Swap in the
real files by pointing load_csv at your own CSV + schema pair.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .preprocessing import Dataset, load_csv


def _data_path(name: str) -> Path:
    return Path(resources.files("decision_sparsity").joinpath("data", name))


def compas_paths() -> tuple[Path, Path]:
    return _data_path("compas.csv"), _data_path("compas.schema.yaml")


def german_credit_paths() -> tuple[Path, Path]:
    return _data_path("german_credit.csv"), _data_path("german_credit.schema.yaml")


def load_compas() -> Dataset:
    """Two-year recidivism table: 6907 rows, 7 features, binary label."""
    data, schema = compas_paths()
    return load_csv(data, schema)


def load_german_credit() -> Dataset:
    """Credit-risk table: 1000 rows, 20 mixed features, binary label (1 = bad)."""
    data, schema = german_credit_paths()
    return load_csv(data, schema)
