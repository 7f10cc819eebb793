"""Explanation credibility: a Gaussian mixture over the negative class.

The mixture is fit by plain EM with diagonal regularization (one-hot columns
make raw covariances singular), log-densities are computed with Cholesky
factors and logsumexp, and the credible walk pushes a low-density explanation
toward its reference one feature at a time, greedily taking the alignment
with the best density gain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatch,
    EmptyNegatives,
    ThresholdUnreachable,
    TooFewSamples,
)
from .preprocessing import Dataset
from .sev import AlignmentMask, SevProblem, materialize_vertex

_COV_REG = 1e-6


@dataclass
class DensityModel:
    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, d)
    covariances: np.ndarray      # (k, d, d), regularized
    trace: list[float] = field(default_factory=list)  # per-iteration log-likelihood

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]


def _log_gaussian(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = len(mean)
    chol = np.linalg.cholesky(cov)
    diff = X - mean
    z = np.linalg.solve(chol, diff.T).T
    maha = (z * z).sum(axis=1)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _component_logpdf(X: np.ndarray, density: DensityModel) -> np.ndarray:
    """(n, k) matrix of log w_k + log N(x | mu_k, Sigma_k)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != density.d:
        raise DimensionMismatch(f"point has {X.shape[1]} dims, model has {density.d}")
    out = np.empty((len(X), density.k))
    for k in range(density.k):
        out[:, k] = np.log(density.weights[k]) + _log_gaussian(
            X, density.means[k], density.covariances[k]
        )
    return out


def log_likelihood(density: DensityModel, point) -> float | np.ndarray:
    """Log of the mixture density; scalar for a single point."""
    arr = np.asarray(point, dtype=float)
    single = arr.ndim == 1
    ll = logsumexp(_component_logpdf(arr, density), axis=1)
    return float(ll[0]) if single else ll


def fit_gmm(negatives: Dataset, k: int, seed: int = 0, max_iter: int = 200,
            tol: float = 1e-6) -> DensityModel:
    """EM on negative-labeled rows; covariances get +1e-6*I every M step.

    Stops when relative log-likelihood improvement falls below `tol`.  The
    per-iteration log-likelihood trace is kept on the model so monotonicity is
    checkable after the fact.
    """
    if (negatives.y == 0).sum() == 0:
        raise EmptyNegatives("no negative-labeled rows")
    neg = negatives.subset(np.flatnonzero(negatives.y == 0))
    X = neg.require_encoded()
    n, d = X.shape
    if n <= k:
        raise TooFewSamples(f"{n} samples cannot support {k} components")

    rng = np.random.default_rng(seed)
    means = X[rng.choice(n, size=k, replace=False)].copy()
    base_cov = np.cov(X.T, ddof=0).reshape(d, d) + _COV_REG * np.eye(d)
    covs = np.stack([base_cov.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)
    density = DensityModel(weights, means, covs)

    prev = -np.inf
    for _ in range(max_iter):
        joint = _component_logpdf(X, density)      # E step
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        density.trace.append(ll)
        resp = np.exp(joint - norm[:, None])

        nk = resp.sum(axis=0)                      # M step
        nk = np.maximum(nk, 1e-12)
        density.weights = nk / n
        density.means = (resp.T @ X) / nk[:, None]
        for j in range(k):
            diff = X - density.means[j]
            cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            density.covariances[j] = cov + _COV_REG * np.eye(d)

        if ll - prev < tol * max(1.0, abs(ll)) and np.isfinite(prev):
            break
        prev = ll
    return density


def pick_threshold(negatives: Dataset, density: DensityModel, quantile: float = 0.10) -> float:
    """Per-sample log-likelihood quantile of the negative population."""
    if not 0 < quantile < 1:
        raise ValueError(f"quantile must be in (0, 1), got {quantile}")
    if (negatives.y == 0).sum() == 0:
        raise EmptyNegatives("no negative-labeled rows")
    neg = negatives.subset(np.flatnonzero(negatives.y == 0))
    ll = log_likelihood(density, neg.require_encoded())
    return float(np.quantile(ll, quantile))


def credible_walk(problem: SevProblem, mask: AlignmentMask, density: DensityModel,
                  threshold: float) -> AlignmentMask:
    """Keep aligning features toward the reference until the point is credible.

    Greedy: each step aligns the not-yet-aligned differing feature whose
    alignment raises the log-likelihood the most (ties to the lowest feature
    index).  The walk also refuses to stop on a positively predicted point, so
    the output always predicts negative.  Raises ThresholdUnreachable when the
    reference itself sits below the threshold (and the walk would need it).
    """
    point = materialize_vertex(problem.query, problem.reference, mask, problem.schema)
    if log_likelihood(density, point) >= threshold and not problem.model.predict(point):
        return mask

    ref_ll = log_likelihood(density, problem.reference.values)
    if ref_ll < threshold:
        raise ThresholdUnreachable(
            f"reference log-likelihood {ref_ll:.4f} below threshold {threshold:.4f}"
        )

    frontier = set(problem.frontier())
    current = mask
    while True:
        point = materialize_vertex(problem.query, problem.reference, current, problem.schema)
        if log_likelihood(density, point) >= threshold and not problem.model.predict(point):
            return current
        candidates = [j for j in range(current.p)
                      if current.bits[j] == 1 and j in frontier]
        if not candidates:
            return current  # full alignment: the reference itself
        best_j, best_ll = None, -np.inf
        for j in candidates:
            trial = materialize_vertex(problem.query, problem.reference,
                                       current.align(j), problem.schema)
            ll = log_likelihood(density, trial)
            if ll > best_ll:
                best_j, best_ll = j, ll
        current = current.align(best_j)
