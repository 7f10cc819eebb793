"""Multi-reference construction.

Two builders live here: score-based soft K-means (fuzzy clustering of the
negative-labeled rows where a sample's fuzzifier grows with its model score,
so confidently negative points anchor centroids and near-boundary points get
smeared), and the flexible per-feature search that nudges a reference within
quantile bounds of the negative population to lower its model score.

Clustering runs in a pluggable embedding space (identity or PCA); the final
centroids are reported back in feature space as member means (mode for
categorical groups, so centroids stay valid one-hot points and decode for
audit).  Centroids that the model scores positive are deactivated, never
silently used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .errors import DegenerateCluster, EmptyNegatives, NoActiveCentroid
from .models import ScoringModel
from .preprocessing import Dataset, FeatureSchema, decode_row, encode_row
from .sev import Reference

_M_PRIME_FLOOR = 1e-3


# embeddings -------------------------------------------------------------------

class IdentityEmbedding:
    name = "identity"

    def fit(self, X: np.ndarray) -> "IdentityEmbedding":
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float)

    def to_dict(self) -> dict:
        return {"name": self.name}


class PcaEmbedding:
    """Plain principal components via SVD, deterministic sign convention."""

    name = "pca"

    def __init__(self, k: int = 2):
        self.k = int(k)
        self.mean_: np.ndarray | None = None
        self.components_: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "PcaEmbedding":
        X = np.asarray(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        k = min(self.k, min(X.shape))
        _, _, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        comps = vt[:k]
        for i, row in enumerate(comps):
            # flip so the dominant loading is positive; svd signs are arbitrary
            if row[np.argmax(np.abs(row))] < 0:
                comps[i] = -row
        self.components_ = comps
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.components_ is None:
            raise ValueError("embedding not fitted")
        return (np.atleast_2d(X) - self.mean_) @ self.components_.T

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "k": self.k,
            "mean": [float(v) for v in self.mean_],
            "components": [[float(v) for v in row] for row in self.components_],
        }


def embedding_from_dict(d: dict):
    if d["name"] == "identity":
        return IdentityEmbedding()
    emb = PcaEmbedding(d["k"])
    emb.mean_ = np.asarray(d["mean"], dtype=float)
    emb.components_ = np.asarray(d["components"], dtype=float)
    return emb


def make_embedding(name: str):
    if name == "identity":
        return IdentityEmbedding()
    if name.startswith("pca"):
        k = int(name[3:]) if len(name) > 3 else 2
        return PcaEmbedding(k)
    raise ValueError(f"unknown embedding {name!r}")


# clustering -------------------------------------------------------------------

@dataclass
class SskmConfig:
    clusters: int = 4
    fuzzifier: float = 2.0          # base m; per-sample m' derives from scores
    max_iter: int = 200
    tol: float = 1e-5               # centroid movement, embedding space
    seed: int = 0
    embedding: str = "pca2"

    def __post_init__(self):
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if not self.fuzzifier > 1:
            raise ValueError("fuzzifier must be > 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class ReferenceSet:
    """Auditable commons: encoded centroids with activity flags.

    Assignment happens in the embedding space; only active (negative-scored)
    centroids are ever assigned.
    """

    references: list[Reference]
    scores: list[float]
    active: list[bool]
    member_counts: list[int]
    embedding: object
    schema: FeatureSchema
    notes: list[str] = field(default_factory=list)
    _embedded: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.references:
            stack = np.stack([r.values for r in self.references])
            self._embedded = self.embedding.transform(stack)

    def __len__(self) -> int:
        return len(self.references)

    def active_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.active) if a]

    def assign(self, query: np.ndarray) -> Reference:
        act = self.active_indices()
        if not act:
            raise NoActiveCentroid("no negative-scored centroid available")
        eq = self.embedding.transform(np.asarray(query, dtype=float))
        dists = np.linalg.norm(self._embedded[act] - eq, axis=1)
        return self.references[act[int(np.argmin(dists))]]

    def save(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = [decode_row(r.values, self.schema) for r in self.references]
        frame = pd.DataFrame(rows, columns=self.schema.feature_names())
        frame.insert(0, "reference_id", [r.id for r in self.references])
        frame.to_csv(directory / "references.csv", index=False)
        meta = {
            "scores": [float(s) for s in self.scores],
            "active": [bool(a) for a in self.active],
            "member_counts": [int(c) for c in self.member_counts],
            "embedding": self.embedding.to_dict(),
            "schema_hash": self.schema.hash(),
            "notes": list(self.notes),
        }
        with open(directory / "references.meta.yaml", "w") as fh:
            yaml.safe_dump(meta, fh, sort_keys=False)

    @classmethod
    def load(cls, directory, schema: FeatureSchema, model: ScoringModel) -> "ReferenceSet":
        """Re-encode, re-score, and re-flag; hand-edited rows are re-validated."""
        from pathlib import Path

        directory = Path(directory)
        frame = pd.read_csv(directory / "references.csv")
        with open(directory / "references.meta.yaml") as fh:
            meta = yaml.safe_load(fh)
        refs, scores, active = [], [], []
        for _, row in frame.iterrows():
            values = encode_row({f: row[f] for f in schema.feature_names()}, schema)
            ref = Reference(str(row["reference_id"]), values)
            s = float(model.score(values))
            refs.append(ref)
            scores.append(s)
            active.append(s < 0.5)
        return cls(
            references=refs,
            scores=scores,
            active=active,
            member_counts=[int(c) for c in meta.get("member_counts", [0] * len(refs))],
            embedding=embedding_from_dict(meta["embedding"]),
            schema=schema,
            notes=list(meta.get("notes", [])),
        )


def _memberships(dists: np.ndarray, m_prime: np.ndarray) -> np.ndarray:
    """Fuzzy memberships with a per-row fuzzifier, computed in log space.

    u_ij is proportional to d_ij^(-2/(m'_i - 1)); rows sitting exactly on a
    centroid split their mass uniformly over the zero-distance centroids.
    """
    n, C = dists.shape
    alpha = 2.0 / (m_prime - 1.0)
    with np.errstate(divide="ignore"):
        logd = np.log(dists)
    logits = -alpha[:, None] * logd
    zero = dists <= 1e-12
    u = np.zeros((n, C))
    any_zero = zero.any(axis=1)
    if any_zero.any():
        z = zero[any_zero]
        u[any_zero] = z / z.sum(axis=1, keepdims=True)
    rest = ~any_zero
    if rest.any():
        lr = logits[rest]
        lr = lr - lr.max(axis=1, keepdims=True)
        e = np.exp(lr)
        u[rest] = e / e.sum(axis=1, keepdims=True)
    return u


def fuzzifier_per_sample(scores: np.ndarray, m: float) -> np.ndarray:
    """m'_i = 1 + 2m*max(score_i - 0.5, 0), clamped away from the crisp pole."""
    raw = 1.0 + 2.0 * m * np.maximum(scores - 0.5, 0.0)
    return np.clip(raw, 1.0 + _M_PRIME_FLOOR, 1.0 + 2.0 * m)


def sskm_cluster(negatives: Dataset, model: ScoringModel, config: SskmConfig,
                 membership_trace: list | None = None) -> ReferenceSet:
    """Score-based soft K-means over negative-labeled rows.

    Iterates membership/centroid updates of the fuzzy objective with the
    per-sample fuzzifier until centroid movement drops below tolerance.  A
    centroid losing all its mass is reseeded once from a random row, then
    flagged.  Pass `membership_trace` to capture per-iteration row sums (test
    hook).
    """
    if (negatives.y == 0).sum() == 0:
        raise EmptyNegatives("no negative-labeled rows to cluster")
    neg = negatives.subset(np.flatnonzero(negatives.y == 0))
    X = neg.require_encoded()
    schema = neg.schema
    rng = np.random.default_rng(config.seed)

    emb = make_embedding(config.embedding).fit(X)
    E = emb.transform(X)
    scores = np.asarray(model.score(X), dtype=float)
    m_prime = fuzzifier_per_sample(scores, config.fuzzifier)

    C = min(config.clusters, len(E))
    # k-means++ style seeding, deterministic under the config seed
    centroids = np.empty((C, E.shape[1]))
    centroids[0] = E[rng.integers(len(E))]
    for j in range(1, C):
        d2 = np.min(((E[:, None, :] - centroids[None, :j, :]) ** 2).sum(-1), axis=1)
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(len(E), 1.0 / len(E))
        centroids[j] = E[rng.choice(len(E), p=probs)]

    reseeded = set()
    notes: list[str] = []
    u = np.full((len(E), C), 1.0 / C)
    for _ in range(config.max_iter):
        dists = np.linalg.norm(E[:, None, :] - centroids[None, :, :], axis=2)
        u = _memberships(dists, m_prime)
        if membership_trace is not None:
            membership_trace.append(u.sum(axis=1).copy())
        w = u ** m_prime[:, None]
        denom = w.sum(axis=0)
        new_centroids = centroids.copy()
        for j in range(C):
            if denom[j] <= 1e-12:
                if j in reseeded:
                    notes.append(f"centroid {j} degenerate twice; left in place")
                    continue
                reseeded.add(j)
                notes.append(f"centroid {j} reseeded after losing all mass")
                new_centroids[j] = E[rng.integers(len(E))]
            else:
                new_centroids[j] = (w[:, j] @ E) / denom[j]
        move = np.max(np.linalg.norm(new_centroids - centroids, axis=1))
        centroids = new_centroids
        if move < config.tol:
            break

    # final hard members decide the feature-space centroid
    dists = np.linalg.norm(E[:, None, :] - centroids[None, :, :], axis=2)
    u = _memberships(dists, m_prime)
    hard = np.argmax(u, axis=1)

    refs, ref_scores, active, counts = [], [], [], []
    for j in range(C):
        members = np.flatnonzero(hard == j)
        counts.append(int(members.size))
        if members.size == 0:
            refs.append(Reference(f"c{j}", np.zeros(schema.n_encoded)))
            ref_scores.append(float("nan"))
            active.append(False)
            notes.append(f"centroid {j} has no members; deactivated")
            continue
        vec = _feature_space_centroid(X[members], schema)
        s = float(model.score(vec))
        refs.append(Reference(f"c{j}", vec))
        ref_scores.append(s)
        active.append(s < 0.5)
        if s >= 0.5:
            notes.append(f"centroid {j} scores {s:.4f} (positive); deactivated")
    if len(reseeded) > 0 and all(c == 0 for c in counts):
        raise DegenerateCluster("all centroids degenerate")
    return ReferenceSet(
        references=refs,
        scores=ref_scores,
        active=active,
        member_counts=counts,
        embedding=emb,
        schema=schema,
        notes=notes,
    )


def _feature_space_centroid(rows: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Member mean per numeric feature; member mode per categorical group, so
    the centroid is a valid encoded point."""
    out = np.zeros(schema.n_encoded)
    for j, f in enumerate(schema.features):
        cols = schema.groups[j]
        if f.kind == "numeric":
            out[cols[0]] = rows[:, cols[0]].mean()
        else:
            counts = rows[:, cols].sum(axis=0)
            base = len(rows) - counts.sum()
            tallies = np.concatenate([[base], counts])
            mode = int(np.argmax(tallies))
            if mode > 0:
                out[cols[mode - 1]] = 1.0
    return out


def assign_reference(query: np.ndarray, refset: ReferenceSet) -> Reference:
    """Nearest active centroid by l2 in the embedding space; ties to lowest index."""
    return refset.assign(query)


# flexible references ----------------------------------------------------------

@dataclass
class FlexConfig:
    epsilon: float = 0.05   # quantile half-width around the reference's position
    grid: int = 20          # uniform draws per feature, plus the incumbent value
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must be in [0, 0.5)")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")


def flexible_search(reference: Reference, negatives: Dataset, model: ScoringModel,
                    config: FlexConfig) -> Reference:
    """Per-feature marginal search for a lower-scoring nearby reference.

    Sweeps numeric features in schema order.  For each, the incumbent value's
    empirical quantile in the negative population is widened by +-epsilon,
    candidates are drawn uniformly inside those percentile bounds, and the
    candidate minimizing model score (other features held at the running
    reference) wins.  The incumbent value is always a candidate, so the score
    never increases.  Categorical features are left untouched.
    """
    neg = negatives.subset(np.flatnonzero(negatives.y == 0)) if (negatives.y == 0).any() else negatives
    X = neg.require_encoded()
    schema = neg.schema
    rng = np.random.default_rng(config.seed)
    current = reference.values.copy()

    if config.epsilon == 0:
        return Reference(reference.id, current)

    for j, f in enumerate(schema.features):
        if f.kind != "numeric":
            continue
        c = schema.groups[j][0]
        col = np.sort(X[:, c])
        q = np.searchsorted(col, current[c], side="right") / len(col)
        lo_q = max(0.0, q - config.epsilon)
        hi_q = min(1.0, q + config.epsilon)
        lo, hi = np.quantile(col, [lo_q, hi_q])
        candidates = np.concatenate([[current[c]], rng.uniform(lo, hi, size=config.grid)])
        trial = np.tile(current, (len(candidates), 1))
        trial[:, c] = candidates
        scores = np.asarray(model.score(trial), dtype=float)
        current[c] = candidates[int(np.argmin(scores))]  # first min keeps incumbent on ties
    return Reference(reference.id, current)


def flex_reference_set(refset: ReferenceSet, negatives: Dataset, model: ScoringModel,
                       config: FlexConfig) -> ReferenceSet:
    """Apply flexible_search to every active centroid; inactive ones pass through."""
    refs, scores, active = [], [], []
    for i, ref in enumerate(refset.references):
        if refset.active[i]:
            moved = flexible_search(ref, negatives, model, config)
            s = float(model.score(moved.values))
            refs.append(moved)
            scores.append(s)
            active.append(s < 0.5)
        else:
            refs.append(ref)
            scores.append(refset.scores[i])
            active.append(False)
    return ReferenceSet(
        references=refs,
        scores=scores,
        active=active,
        member_counts=list(refset.member_counts),
        embedding=refset.embedding,
        schema=refset.schema,
        notes=list(refset.notes) + [f"flexible search applied (epsilon={config.epsilon})"],
    )


# audit ------------------------------------------------------------------------

@dataclass
class AuditRow:
    reference_id: str
    active: bool
    score: float
    member_count: int
    values: dict[str, object]


@dataclass
class AuditReport:
    rows: list[AuditRow]

    def to_text(self, schema: FeatureSchema) -> str:
        if not self.rows:
            return "(no references)\n"
        names = schema.feature_names()
        header = ["id", "active", "score", "members"] + names
        table = [header]
        for r in self.rows:
            vals = []
            for n in names:
                v = r.values[n]
                vals.append(f"{v:.4f}" if isinstance(v, float) else str(v))
            table.append([r.reference_id, "yes" if r.active else "NO",
                          f"{r.score:.4f}", str(r.member_count)] + vals)
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        lines = []
        for ri, row in enumerate(table):
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
            if ri == 0:
                lines.append("  ".join("-" * widths[i] for i in range(len(header))))
        return "\n".join(lines) + "\n"


def audit_references(refset: ReferenceSet, model: ScoringModel,
                     schema: FeatureSchema) -> AuditReport:
    rows = []
    for i, ref in enumerate(refset.references):
        score = refset.scores[i]
        if not np.isnan(score):
            score = float(model.score(ref.values))
        rows.append(AuditRow(
            reference_id=ref.id,
            active=bool(refset.active[i]),
            score=score,
            member_count=int(refset.member_counts[i]),
            values=decode_row(ref.values, schema),
        ))
    return AuditReport(rows)
