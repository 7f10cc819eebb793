"""Training models to be sparsely explainable.

The surrogate loss walks, for every positively labeled sample, the p vertices
one alignment away from its reference and takes the best (lowest) score,
floored at 0.5: a sample that some single alignment already flips contributes
exactly the floor and no gradient.  Adding the usual cross-entropy and a
penalty that keeps references negatively predicted gives the total objective;
training runs BCE-only warm-up epochs first, then the penalized phase.

Gradients are assembled by hand through the models' logit backprop, which is
what the finite-difference check in this module verifies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DivergedLoss, NoPositiveQueries, NonFiniteLoss
from .models import (
    AdamState,
    DifferentiableModel,
    LinearModel,
    bce_from_logits,
    init_mlp,
    minibatch_epochs,
)
from .preprocessing import Dataset, FeatureSchema
from .sev import Reference, build_mean_mode_reference


@dataclass
class OptConfig:
    c1: float = 1.0                  # sparsity-surrogate weight
    c2: float = 1.0                  # reference-negativity weight
    theta: float = 0.05              # reference margin below 0.5
    warmup_epochs: int = 80
    penalty_epochs: int = 20
    batch_size: int = 128
    step: float = 0.1
    recluster_interval: int = 5      # cluster mode only
    clusters: int = 4
    seed: int = 0
    track_history_sev: bool = True

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 < self.theta < 0.5:
            raise ValueError("theta must be in (0, 0.5)")


def _reference_matrix(references, n: int, d: int) -> np.ndarray:
    """Accept a Reference, a vector, a matrix, or a list of References."""
    if isinstance(references, Reference):
        return np.tile(references.values, (n, 1))
    if isinstance(references, (list, tuple)) and references and isinstance(references[0], Reference):
        R = np.stack([r.values for r in references])
    else:
        R = np.asarray(references, dtype=float)
        if R.ndim == 1:
            R = np.tile(R, (n, 1))
    if R.shape != (n, d):
        raise ValueError(f"reference matrix shape {R.shape} != ({n}, {d})")
    return R


def _single_alignment_scores(model: DifferentiableModel, Xpos: np.ndarray,
                             R: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """(n, p) scores of the one-alignment vertices for every query."""
    n = len(Xpos)
    p = schema.n_features
    out = np.empty((n, p))
    for j in range(p):
        cols = schema.groups[j]
        V = Xpos.copy()
        V[:, cols] = R[:, cols]
        out[:, j] = model.score(V)
    return out


def loss_sev_all_opt(model: DifferentiableModel, queries: np.ndarray, references,
                     schema: FeatureSchema) -> float:
    """(1/n) * sum_i max(min_j score(query_i with group j aligned), 0.5)."""
    Xpos = np.atleast_2d(np.asarray(queries, dtype=float))
    if len(Xpos) == 0:
        raise NoPositiveQueries("sparsity loss needs at least one positive query")
    R = _reference_matrix(references, len(Xpos), Xpos.shape[1])
    s = _single_alignment_scores(model, Xpos, R, schema)
    return float(np.maximum(s.min(axis=1), 0.5).mean())


def loss_pos_ref(model: DifferentiableModel, references, theta: float = 0.05) -> float:
    """sum_i max(score(ref_i), 0.5 - theta); zero-gradient once references are
    comfortably negative."""
    R = np.atleast_2d(np.asarray(
        references.values if isinstance(references, Reference) else references, dtype=float
    ))
    if len(R) == 0:
        return 0.0
    s = np.asarray(model.score(R), dtype=float)
    return float(np.maximum(s, 0.5 - theta).sum())


@dataclass
class TotalLossParts:
    bce: float
    sev: float
    pos_ref: float
    total: float


def total_loss_parts(model: DifferentiableModel, data: Dataset, references,
                     config: OptConfig) -> TotalLossParts:
    X = data.require_encoded()
    y = data.y.astype(float)
    bce = bce_from_logits(model._logits_matrix(X), y)
    pos_rows = np.flatnonzero(data.y == 1)
    if pos_rows.size == 0:
        raise NoPositiveQueries("no positively labeled rows")
    R = _reference_matrix(references, pos_rows.size, X.shape[1])
    sev = loss_sev_all_opt(model, X[pos_rows], R, data.schema)
    ref_pen = loss_pos_ref(model, R, config.theta)
    total = bce + config.c1 * sev + config.c2 * ref_pen
    return TotalLossParts(bce=bce, sev=sev, pos_ref=ref_pen, total=total)


def total_loss(model: DifferentiableModel, data: Dataset, references,
               config: OptConfig) -> float:
    return total_loss_parts(model, data, references, config).total


# gradients --------------------------------------------------------------------

def _zero_grads(model: DifferentiableModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params().items()}


def _accumulate(into: dict[str, np.ndarray], extra: dict[str, np.ndarray], scale: float = 1.0):
    for k in into:
        into[k] += scale * extra[k]


def sev_loss_grad(model: DifferentiableModel, Xpos: np.ndarray, R: np.ndarray,
                  schema: FeatureSchema) -> dict[str, np.ndarray]:
    """Gradient of loss_sev_all_opt w.r.t. model parameters.

    Each query routes gradient through its first minimizing alignment, and
    only when that vertex still scores above the 0.5 floor.
    """
    n = len(Xpos)
    s = _single_alignment_scores(model, Xpos, R, schema)
    jmin = np.argmin(s, axis=1)  # first minimum: deterministic subgradient
    smin = s[np.arange(n), jmin]
    active = smin > 0.5
    grads = _zero_grads(model)
    if not active.any():
        return grads
    rows = np.flatnonzero(active)
    V = Xpos[rows].copy()
    for i, r in enumerate(rows):
        cols = schema.groups[jmin[r]]
        V[i, cols] = R[r, cols]
    sv = smin[rows]
    upstream = sv * (1.0 - sv) / n  # d sigmoid / d logit, mean over all n queries
    _accumulate(grads, model.logit_backprop(V, upstream))
    return grads


def pos_ref_grad(model: DifferentiableModel, R: np.ndarray, theta: float) -> dict[str, np.ndarray]:
    R = np.atleast_2d(R)
    s = np.asarray(model.score(R), dtype=float)
    active = s > 0.5 - theta
    grads = _zero_grads(model)
    if not active.any():
        return grads
    sv = s[active]
    _accumulate(grads, model.logit_backprop(R[active], sv * (1.0 - sv)))
    return grads


def total_loss_grad(model: DifferentiableModel, data: Dataset, references,
                    config: OptConfig) -> dict[str, np.ndarray]:
    X = data.require_encoded()
    y = data.y.astype(float)
    z = model._logits_matrix(X)
    grads = model.logit_backprop(X, (expit(z) - y) / len(y))
    pos_rows = np.flatnonzero(data.y == 1)
    R = _reference_matrix(references, pos_rows.size, X.shape[1])
    _accumulate(grads, sev_loss_grad(model, X[pos_rows], R, data.schema), config.c1)
    _accumulate(grads, pos_ref_grad(model, R, config.theta), config.c2)
    return grads


def gradient_check(value_and_grad, params: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences.

    `value_and_grad(vector) -> (loss, gradient vector)`.  The caller is
    responsible for picking a tie-free point (no min/max switches within
    epsilon); kinks make the comparison meaningless.
    """
    params = np.asarray(params, dtype=float)
    val, grad = value_and_grad(params)
    if not np.isfinite(val):
        raise NonFiniteLoss(f"loss is {val}")
    worst = 0.0
    for i in range(len(params)):
        e = np.zeros_like(params)
        e[i] = epsilon
        f_hi, _ = value_and_grad(params + e)
        f_lo, _ = value_and_grad(params - e)
        fd = (f_hi - f_lo) / (2 * epsilon)
        rel = abs(fd - grad[i]) / max(1.0, abs(fd), abs(grad[i]))
        worst = max(worst, rel)
    return worst


def value_and_grad_closure(model: DifferentiableModel, data: Dataset, references,
                           config: OptConfig):
    """Flat-parameter closure over total_loss, for gradient_check."""

    def fn(vec: np.ndarray):
        model.set_params_flat(vec)
        parts = total_loss_parts(model, data, references, config)
        grads = total_loss_grad(model, data, references, config)
        flat = np.concatenate([grads[k].ravel() for k in model.params()])
        return parts.total, flat

    return fn


# the training schedule ----------------------------------------------------------

@dataclass
class AlloptResult:
    model: DifferentiableModel
    history: list[dict]
    reference_mode: str
    references: object  # Reference or ReferenceSet, as used in the last epoch
    notes: list[str] = field(default_factory=list)


def _history_mean_sev(model, train: Dataset, refs) -> float | None:
    """Engine-measured mean sparse explanation value on train positives.

    Returns None while the references are unusable (positive-scored reference
    early in training, or no active centroid yet)."""
    from .errors import EmptyRecords, NoActiveCentroid, ReferencePositive
    from .sev import ExplainOptions, explain_batch, summarize_metrics

    try:
        records = explain_batch(model, train, refs, ExplainOptions(k_max=None))
        return summarize_metrics(records).mean_sev
    except (EmptyRecords, NoActiveCentroid, ReferencePositive):
        return None


def _build_references(reference_mode: str, train: Dataset, model, config: OptConfig,
                      seed: int):
    if reference_mode == "single":
        return build_mean_mode_reference(train)
    from .references import SskmConfig, sskm_cluster

    return sskm_cluster(train, model, SskmConfig(
        clusters=config.clusters, seed=seed, embedding="pca2"))


def _assign_rows(reference_mode: str, refs, Xpos: np.ndarray) -> np.ndarray:
    """Per-query reference rows.  During training, assignment ignores the
    active flag (a positive-scored centroid is exactly what the reference
    penalty exists to fix), but skips memberless centroids."""
    if reference_mode == "single":
        return np.tile(refs.values, (len(Xpos), 1))
    cand = [i for i, c in enumerate(refs.member_counts) if c > 0]
    if not cand:
        cand = list(range(len(refs.references)))
    centers = refs.embedding.transform(np.stack([refs.references[i].values for i in cand]))
    E = refs.embedding.transform(Xpos)
    dists = np.linalg.norm(E[:, None, :] - centers[None, :, :], axis=2)
    pick = np.argmin(dists, axis=1)
    return np.stack([refs.references[cand[i]].values for i in pick])


def allopt_train(model_family: str, train: Dataset, reference_mode: str = "single",
                 config: OptConfig | None = None, width: int = 128) -> AlloptResult:
    """Warm-up epochs of plain BCE, then penalized epochs of the full objective.

    With penalty_epochs = 0 the parameter trajectory is bit-identical to plain
    BCE training under the same seed: the warm-up loop consumes randomness
    identically whether or not a penalty phase follows.  Cluster mode rebuilds
    centroids every recluster_interval penalty epochs and freezes assignments
    in between.
    """
    config = config or OptConfig()
    if reference_mode not in ("single", "cluster"):
        raise ValueError(f"reference_mode must be single/cluster, got {reference_mode!r}")
    X = train.require_encoded()
    y = train.y.astype(float)
    d = X.shape[1]
    rng = np.random.default_rng(config.seed)

    if model_family == "linear":
        model: DifferentiableModel = LinearModel(np.zeros(d), 0.0,
                                                 schema_hash=train.schema.hash())
    elif model_family == "mlp":
        model = init_mlp(d, width, seed=config.seed, schema_hash=train.schema.hash())
    else:
        raise ValueError(f"model_family must be linear/mlp, got {model_family!r}")

    history: list[dict] = []
    notes: list[str] = []
    pos_rows = np.flatnonzero(train.y == 1)
    if pos_rows.size == 0:
        raise NoPositiveQueries("training data has no positive rows")

    refs = None
    ref_matrix: np.ndarray | None = None

    def record(epoch: int, phase: str, m: DifferentiableModel):
        z = m._logits_matrix(X)
        bce = bce_from_logits(z, y)
        if not np.isfinite(bce):
            raise DivergedLoss(epoch, history)
        acc = float(((z >= 0.0).astype(int) == train.y).mean())
        row = {"epoch": epoch, "phase": phase, "bce": bce, "train_acc": acc,
               "sev_loss": float("nan"), "pos_ref_loss": float("nan"),
               "mean_sev": float("nan")}
        if ref_matrix is not None:
            row["sev_loss"] = loss_sev_all_opt(m, X[pos_rows], ref_matrix, train.schema)
            row["pos_ref_loss"] = loss_pos_ref(m, ref_matrix, config.theta)
        if config.track_history_sev and refs is not None:
            ms = _history_mean_sev(m, train, refs)
            row["mean_sev"] = float("nan") if ms is None else ms
        history.append(row)

    if reference_mode == "single":
        # the mean/mode reference is model-independent; build it up front so
        # the warm-up history already reports the surrogate and engine values
        refs = _build_references("single", train, model, config, seed=config.seed)
        ref_matrix = _assign_rows("single", refs, X[pos_rows])

    # warm-up: exactly the plain BCE loop
    adam = minibatch_epochs(
        model, X, y, epochs=config.warmup_epochs, batch_size=config.batch_size,
        lr=config.step, rng=rng,
        epoch_hook=lambda e, m: record(e, "warmup", m),
    )

    # penalty phase
    for pe in range(config.penalty_epochs):
        if refs is None or (reference_mode == "cluster"
                            and pe % config.recluster_interval == 0):
            refs = _build_references(reference_mode, train, model, config,
                                     seed=config.seed + 1000 + pe)
            ref_matrix = _assign_rows(reference_mode, refs, X[pos_rows])
            if reference_mode == "cluster":
                notes.append(f"reclustered at penalty epoch {pe}")

        row_to_ref = {int(r): i for i, r in enumerate(pos_rows)}

        def batch_extra(m: DifferentiableModel, rows: np.ndarray):
            sel = [row_to_ref[int(r)] for r in rows if int(r) in row_to_ref]
            if not sel:
                return None
            sel_rows = pos_rows[sel]
            grads = sev_loss_grad(m, X[sel_rows], ref_matrix[sel], train.schema)
            for k, v in pos_ref_grad(m, ref_matrix[sel], config.theta).items():
                grads[k] = config.c1 * grads[k] + config.c2 * v
            return grads

        minibatch_epochs(
            model, X, y, epochs=1, batch_size=config.batch_size, lr=config.step,
            rng=rng, adam=adam, batch_extra=batch_extra,
            epoch_hook=lambda e, m, _pe=pe: record(config.warmup_epochs + _pe, "penalty", m),
        )

    if refs is None:  # zero penalty epochs: still report final references
        refs = _build_references(reference_mode, train, model, config, seed=config.seed + 999)
    return AlloptResult(model=model, history=history, reference_mode=reference_mode,
                        references=refs, notes=notes)


def write_history_csv(history: list[dict], path) -> None:
    cols = ["epoch", "phase", "bce", "sev_loss", "pos_ref_loss", "train_acc", "mean_sev"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in history:
            writer.writerow({c: row.get(c, "") for c in cols})
