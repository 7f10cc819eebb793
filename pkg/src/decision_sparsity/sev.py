"""Minimal-alignment search on the query/reference hypercube.

A query (predicted positive) and a reference (predicted negative) span a
hypercube of 2^p vertices, one per alignment pattern over the p original
features.  Bit 1 keeps the query's value, bit 0 takes the reference's value,
and a one-hot group always moves as a unit.  The sparse explanation value is
the size of the smallest alignment set whose vertex is predicted negative.

Search is iterative deepening over subset sizes k = 1..k_max; features where
query and reference already agree are never part of the frontier (aligning
them is a no-op and cannot count toward the value).  Ties at the winning k
are broken by lowest model score, then lexicographic subset order.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyNegatives,
    EmptyRecords,
    LengthMismatch,
    QueryNotPositive,
    ReferencePositive,
    Unexplainable,
)
from .models import ScoringModel
from .preprocessing import Dataset, FeatureSchema, decode_row

_COMBO_CHUNK = 65536


@dataclass(frozen=True)
class AlignmentMask:
    """Bit vector over original features; 0 = aligned to reference."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("mask bits must be 0/1")

    @property
    def p(self) -> int:
        return len(self.bits)

    @classmethod
    def ones(cls, p: int) -> "AlignmentMask":
        return cls(tuple([1] * p))

    @classmethod
    def from_aligned(cls, p: int, aligned) -> "AlignmentMask":
        bits = [1] * p
        for j in aligned:
            bits[j] = 0
        return cls(tuple(bits))

    def aligned_indices(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.bits) if b == 0)

    def align(self, j: int) -> "AlignmentMask":
        bits = list(self.bits)
        bits[j] = 0
        return AlignmentMask(tuple(bits))


@dataclass(frozen=True)
class Reference:
    """A negatively predicted prototype point in encoded feature space."""

    id: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass
class SevProblem:
    """One query against one reference; construction enforces the sign contract."""

    model: ScoringModel
    query: np.ndarray
    reference: Reference
    schema: FeatureSchema

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=float)
        if self.query.shape != self.reference.values.shape:
            raise LengthMismatch("query/reference dimension mismatch")
        if not self.model.predict(self.query):
            raise QueryNotPositive(f"query scores {self.model.score(self.query):.6f}")
        ref_score = self.model.score(self.reference.values)
        if ref_score >= 0.5:
            raise ReferencePositive(self.reference.id, ref_score)

    @property
    def p(self) -> int:
        return self.schema.n_features

    def frontier(self) -> list[int]:
        """Features where query and reference differ; the only useful alignments."""
        out = []
        for j, cols in enumerate(self.schema.groups):
            if not np.array_equal(self.query[cols], self.reference.values[cols]):
                out.append(j)
        return out

    def effective_sev(self, mask: AlignmentMask) -> int:
        """Aligned features that actually differ (no-op alignments don't count)."""
        frontier = set(self.frontier())
        return sum(1 for j in mask.aligned_indices() if j in frontier)


@dataclass
class SevResult:
    sev: int
    mask: AlignmentMask
    score: float
    vertex: np.ndarray


def materialize_vertex(query, reference, mask: AlignmentMask, schema: FeatureSchema) -> np.ndarray:
    """Mix query and reference per the mask, whole one-hot groups at a time."""
    q = np.asarray(query, dtype=float)
    r = reference.values if isinstance(reference, Reference) else np.asarray(reference, dtype=float)
    if mask.p != schema.n_features:
        raise LengthMismatch(f"mask length {mask.p} != feature count {schema.n_features}")
    if q.shape != r.shape or q.shape[-1] != schema.n_encoded:
        raise LengthMismatch("query/reference width does not match schema")
    take_query = np.asarray(mask.bits, dtype=bool)[schema.column_feature()]
    return np.where(take_query, q, r)


def _materialize_batch(q, r, aligned_matrix: np.ndarray, col_feature: np.ndarray) -> np.ndarray:
    # aligned_matrix: (m, p) bool, True where feature is aligned to reference
    take_ref = aligned_matrix[:, col_feature]
    return np.where(take_ref, r[None, :], q[None, :])


def compute_sev_minus(problem: SevProblem, k_max: int | None = 6) -> SevResult:
    """Smallest alignment count that flips the prediction, with its witness.

    k_max of None lifts the cap to the full frontier (exhaustive).  Raises
    Unexplainable if nothing flips within the cap.
    """
    frontier = problem.frontier()
    col_feature = problem.schema.column_feature()
    q, r = problem.query, problem.reference.values
    cap = len(frontier) if k_max is None else min(int(k_max), len(frontier))
    if cap < 1:
        raise Unexplainable(0 if k_max is None else int(k_max))

    for k in range(1, cap + 1):
        best: tuple[float, tuple[int, ...]] | None = None
        combos = itertools.combinations(frontier, k)
        while True:
            chunk = list(itertools.islice(combos, _COMBO_CHUNK))
            if not chunk:
                break
            idx = np.asarray(chunk, dtype=np.intp)
            aligned = np.zeros((len(chunk), problem.p), dtype=bool)
            aligned[np.arange(len(chunk))[:, None], idx] = True
            vertices = _materialize_batch(q, r, aligned, col_feature)
            scores = np.asarray(problem.model.score(vertices), dtype=float)
            flips = ~problem.model.predict(vertices)
            if flips.any():
                rows = np.flatnonzero(flips)
                # chunks arrive in lexicographic order, argmin keeps the first
                # minimum, so (score, lex) tie-breaking falls out directly
                j = rows[np.argmin(scores[rows])]
                cand = (float(scores[j]), chunk[j])
                if best is None or cand[0] < best[0]:
                    best = cand
        if best is not None:
            mask = AlignmentMask.from_aligned(problem.p, best[1])
            vertex = materialize_vertex(q, problem.reference, mask, problem.schema)
            return SevResult(sev=k, mask=mask, score=best[0], vertex=vertex)
    raise Unexplainable(cap if k_max is None else int(k_max))


def build_mean_mode_reference(negatives: Dataset, ref_id: str = "mean_mode") -> Reference:
    """Mean for numerics, mode for categoricals, over negative-labeled rows.

    Accepts a mixed dataset and filters to label 0 itself.  Mode ties go to
    the earliest level in schema order.
    """
    if (negatives.y == 0).sum() == 0:
        raise EmptyNegatives("no negative-labeled rows")
    neg = negatives.subset(np.flatnonzero(negatives.y == 0))
    X = neg.require_encoded()
    schema = neg.schema
    out = np.zeros(schema.n_encoded)
    for j, f in enumerate(schema.features):
        cols = schema.groups[j]
        if f.kind == "numeric":
            out[cols[0]] = X[:, cols[0]].mean()
        else:
            counts = X[:, cols].sum(axis=0)
            base = len(X) - counts.sum()  # rows on the all-zeros first level
            tallies = np.concatenate([[base], counts])
            mode = int(np.argmax(tallies))  # argmax takes first on ties
            if mode > 0:
                out[cols[mode - 1]] = 1.0
    return Reference(ref_id, out)


@dataclass
class ChangedFeature:
    feature: str
    from_value: object
    to_value: object


@dataclass
class ExplanationRecord:
    query_id: object
    reference_id: str
    mask: AlignmentMask
    sev: int
    changed: list[ChangedFeature]
    linf_numeric: float
    l0: int
    log_likelihood: float | None = None
    ms: float = 0.0
    score: float = field(default=0.0, repr=False)


@dataclass
class ExplainOptions:
    k_max: int | None = 6
    jobs: int = 1
    density: object | None = None          # DensityModel for log-likelihood fields
    walk_threshold: float | None = None    # enables the credible walk post-pass
    on_unexplainable: str = "skip"         # skip | raise


def linf_numeric(a: np.ndarray, b: np.ndarray, schema: FeatureSchema) -> float:
    """Max absolute gap over standardized numeric columns; dummies excluded."""
    cols = schema.numeric_columns()
    if not cols:
        return 0.0
    return float(np.max(np.abs(np.asarray(a)[cols] - np.asarray(b)[cols])))


def _record_for(problem: SevProblem, result: SevResult, query_id, options: ExplainOptions,
                t0: float) -> ExplanationRecord:
    schema = problem.schema
    mask, vertex = result.mask, result.vertex
    log_lik = None
    if options.density is not None:
        from .credibility import log_likelihood

        if options.walk_threshold is not None:
            from .credibility import credible_walk

            mask = credible_walk(problem, mask, options.density, options.walk_threshold)
            vertex = materialize_vertex(problem.query, problem.reference, mask, schema)
        log_lik = float(log_likelihood(options.density, vertex))
    q_dec = decode_row(problem.query, schema)
    v_dec = decode_row(vertex, schema)
    changed = []
    for j in sorted(set(mask.aligned_indices()) & set(problem.frontier())):
        name = schema.features[j].name
        changed.append(ChangedFeature(name, q_dec[name], v_dec[name]))
    return ExplanationRecord(
        query_id=query_id,
        reference_id=problem.reference.id,
        mask=mask,
        sev=problem.effective_sev(mask),
        changed=changed,
        linf_numeric=linf_numeric(problem.query, vertex, schema),
        l0=len(changed),
        log_likelihood=log_lik,
        ms=(time.perf_counter() - t0) * 1000.0,
        score=result.score,
    )


def explain_batch(model: ScoringModel, queries: Dataset, reference_assignment,
                  options: ExplainOptions | None = None) -> list[ExplanationRecord]:
    """Explain every positively predicted row of `queries`.

    `reference_assignment` may be a single Reference, a ReferenceSet (nearest
    active centroid per query), or a callable query_vector -> Reference.
    Negative-predicted rows are skipped; Unexplainable queries are skipped or
    re-raised per options.  Output order follows query order regardless of
    worker count.
    """
    options = options or ExplainOptions()
    X = queries.require_encoded()
    schema = queries.schema

    if isinstance(reference_assignment, Reference):
        assign = lambda q: reference_assignment  # noqa: E731
    elif callable(getattr(reference_assignment, "assign", None)):
        assign = reference_assignment.assign
    elif callable(reference_assignment):
        assign = reference_assignment
    else:
        raise TypeError("reference_assignment must be Reference, ReferenceSet, or callable")

    positive = np.flatnonzero(model.predict(X))
    skipped = len(X) - len(positive)
    if skipped:
        import logging

        logging.getLogger(__name__).info(
            "explain_batch: skipped %d negative-predicted queries", skipped
        )

    def solve(i: int) -> ExplanationRecord | None:
        t0 = time.perf_counter()
        ref = assign(X[i])
        problem = SevProblem(model, X[i], ref, schema)
        try:
            result = compute_sev_minus(problem, options.k_max)
        except Unexplainable:
            if options.on_unexplainable == "raise":
                raise
            return None
        return _record_for(problem, result, int(i), options, t0)

    if options.jobs and options.jobs > 1:
        with ThreadPoolExecutor(max_workers=options.jobs) as pool:
            results = list(pool.map(solve, positive))
    else:
        results = [solve(i) for i in positive]
    return [r for r in results if r is not None]


@dataclass
class MetricsSummary:
    n: int
    mean_sev: float
    median_linf: float
    mean_log_likelihood: float | None


def summarize_metrics(records: list[ExplanationRecord]) -> MetricsSummary:
    if not records:
        raise EmptyRecords("no explanation records to summarize")
    sevs = np.asarray([r.sev for r in records], dtype=float)
    linfs = np.asarray([r.linf_numeric for r in records], dtype=float)
    liks = [r.log_likelihood for r in records if r.log_likelihood is not None]
    return MetricsSummary(
        n=len(records),
        mean_sev=float(sevs.mean()),
        median_linf=float(np.median(linfs)),
        mean_log_likelihood=float(np.mean(liks)) if liks else None,
    )


@dataclass
class ReferenceSummary:
    reference_id: str
    n: int
    mean_sev: float
    share_ge_3: float
    share_ge_6: float
    share_ge_10: float


def _tail_summary(model, queries: Dataset, reference: Reference,
                  k_max: int | None) -> ReferenceSummary:
    X = queries.require_encoded()
    positive = np.flatnonzero(model.predict(X))
    sevs = []
    for i in positive:
        problem = SevProblem(model, X[i], reference, queries.schema)
        sevs.append(compute_sev_minus(problem, k_max).sev)
    arr = np.asarray(sevs, dtype=float)
    if arr.size == 0:
        raise EmptyRecords("no positive queries")
    return ReferenceSummary(
        reference_id=reference.id,
        n=arr.size,
        mean_sev=float(arr.mean()),
        share_ge_3=float((arr >= 3).mean()),
        share_ge_6=float((arr >= 6).mean()),
        share_ge_10=float((arr >= 10).mean()),
    )


def compare_references(model: ScoringModel, queries: Dataset, reference_a: Reference,
                       reference_b: Reference, k_max: int | None = None
                       ) -> tuple[ReferenceSummary, ReferenceSummary]:
    """Sensitivity audit: same queries, two references, exhaustive by default
    so the tail shares are exact."""
    for ref in (reference_a, reference_b):
        s = model.score(ref.values)
        if s >= 0.5:
            raise ReferencePositive(ref.id, s)
    return (
        _tail_summary(model, queries, reference_a, k_max),
        _tail_summary(model, queries, reference_b, k_max),
    )
