"""Sparse explanation values for binary tabular classifiers.

The library answers "how few features of this positively predicted row must be
moved to a population baseline before the prediction flips", and ships the
machinery around that question: schema-aware preprocessing, small trainable
models, cluster and flexible baselines, credibility scoring of the resulting
counterfactual points, tree-specific explanations, and training procedures
that optimize for sparse explanations directly.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    SparsityError,
    Unexplainable,
)
from .models import (
    LinearModel,
    MlpModel,
    ScoringModel,
    load_model,
    save_model,
    train_logistic,
    train_mlp,
)
from .preprocessing import (
    Dataset,
    Feature,
    FeatureSchema,
    encode_and_standardize,
    load_csv,
    prepare,
    stratified_split,
)
from .sev import (
    AlignmentMask,
    ExplainOptions,
    Reference,
    SevProblem,
    SevResult,
    build_mean_mode_reference,
    compare_references,
    compute_sev_minus,
    explain_batch,
    summarize_metrics,
)

__all__ = [
    "__version__",
    "AlignmentMask",
    "ConfigError",
    "DataError",
    "Dataset",
    "ExplainOptions",
    "Feature",
    "FeatureSchema",
    "LinearModel",
    "MlpModel",
    "Reference",
    "ScoringModel",
    "SevProblem",
    "SevResult",
    "SparsityError",
    "Unexplainable",
    "build_mean_mode_reference",
    "compare_references",
    "compute_sev_minus",
    "encode_and_standardize",
    "explain_batch",
    "load_csv",
    "load_model",
    "prepare",
    "save_model",
    "stratified_split",
    "summarize_metrics",
    "train_logistic",
    "train_mlp",
]
