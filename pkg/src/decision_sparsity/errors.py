"""Exception taxonomy for the whole package.

Every error raised on purpose derives from :class:`SparsityError` so the CLI
can map failures to exit codes without string matching.  Data-shaped problems
(bad CSVs, schema violations, empty classes) derive from :class:`DataError`;
configuration problems from :class:`ConfigError`; everything else is a
runtime failure.
"""

from __future__ import annotations


class SparsityError(Exception):
    """Base class for all package errors."""


class ConfigError(SparsityError):
    """Invalid configuration: bad flag combinations, missing files, bad modes."""


class DataError(SparsityError):
    """Problems with input data or schema declarations."""


# data / preprocessing

class MissingColumn(DataError):
    pass


class NonBinaryLabel(DataError):
    pass


class UnknownLevel(DataError):
    pass


class NumericMissing(DataError):
    """Numeric cells may not be missing; only categoricals get a 'Missing' level."""


class ZeroVariance(DataError):
    def __init__(self, column: str):
        super().__init__(f"zero-variance numeric column: {column!r}")
        self.column = column


class EmptyClass(DataError):
    pass


class SingleClassData(DataError):
    pass


class EmptyNegatives(DataError):
    pass


# models

class SchemaMismatch(SparsityError):
    """Model was trained against a different encoded schema."""


# sev engine

class LengthMismatch(SparsityError):
    pass


class QueryNotPositive(SparsityError):
    pass


class ReferencePositive(SparsityError):
    def __init__(self, reference_id: str, score: float):
        super().__init__(
            f"reference {reference_id!r} predicts positive (score {score:.6f})"
        )
        self.reference_id = reference_id
        self.score = score


class Unexplainable(SparsityError):
    """No alignment subset of size <= k_max flips the prediction."""

    def __init__(self, k_max: int):
        super().__init__(f"no flipping subset of size <= {k_max}")
        self.k_max = k_max


class EmptyRecords(SparsityError):
    pass


# references

class DegenerateCluster(SparsityError):
    pass


class NoActiveCentroid(SparsityError):
    pass


# credibility

class TooFewSamples(SparsityError):
    pass


class DimensionMismatch(SparsityError):
    pass


class ThresholdUnreachable(SparsityError):
    """Even the full reference sits below the credibility threshold."""


# trees

class NoNegativeLeaf(SparsityError):
    pass


class InfeasibleConditions(SparsityError):
    pass


class EmptyPool(SparsityError):
    pass


# optimization

class NoPositiveQueries(SparsityError):
    pass


class DivergedLoss(SparsityError):
    def __init__(self, epoch: int, history):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = history


class NonFiniteLoss(SparsityError):
    pass


# cli

class MissingRun(ConfigError):
    pass
