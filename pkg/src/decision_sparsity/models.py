"""Scoring models: the contract plus logistic regression and a one-hidden-layer
perceptron, with hand-rolled training so every gradient used elsewhere in the
package is ours to verify.

The prediction rule lives in exactly one place: ``ScoringModel.predict`` is
``score >= 0.5``.  A score of exactly 0.5 therefore counts as positive, and a
"flip" downstream always means score < 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import SchemaMismatch, SingleClassData
from .preprocessing import Dataset, FeatureSchema

FORMAT_VERSION = 1


def _as_matrix(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


class ScoringModel:
    """Anything with score(x) in [0,1]; predict is score >= 0.5, defined once."""

    def score(self, x):
        arr, single = _as_matrix(x)
        s = self._score_matrix(arr)
        return float(s[0]) if single else s

    def predict(self, x):
        s = self.score(x)
        if isinstance(s, float):
            return s >= 0.5
        return s >= 0.5

    def _score_matrix(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DifferentiableModel(ScoringModel):
    """Adds logits plus parameter-space plumbing for manual backprop."""

    def logits(self, x):
        arr, single = _as_matrix(x)
        z = self._logits_matrix(arr)
        return float(z[0]) if single else z

    def _score_matrix(self, X: np.ndarray) -> np.ndarray:
        return expit(self._logits_matrix(X))

    def _logits_matrix(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # parameters are exposed as an ordered dict of arrays
    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        raise NotImplementedError

    def logit_backprop(self, X: np.ndarray, upstream: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of sum_i upstream_i * logit(x_i) w.r.t. each parameter."""
        raise NotImplementedError

    def params_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params().values()])

    def set_params_flat(self, vec: np.ndarray) -> None:
        out = {}
        i = 0
        for k, v in self.params().items():
            out[k] = vec[i : i + v.size].reshape(v.shape).copy()
            i += v.size
        self.set_params(out)

    def clone(self):
        raise NotImplementedError


class LinearModel(DifferentiableModel):
    """Logistic scorer: score(x) = sigmoid(w.x + b)."""

    def __init__(self, weights: np.ndarray, bias: float, penalty: str = "none",
                 strength: float = 0.0, schema_hash: str | None = None):
        self.weights = np.asarray(weights, dtype=float).copy()
        self.bias = float(bias)
        self.penalty = penalty
        self.strength = float(strength)
        self.schema_hash = schema_hash

    def _logits_matrix(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.weights, "b": np.asarray([self.bias])}

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        self.weights = np.asarray(new["w"], dtype=float).copy()
        self.bias = float(np.asarray(new["b"]).ravel()[0])

    def logit_backprop(self, X, upstream):
        return {"w": X.T @ upstream, "b": np.asarray([upstream.sum()])}

    def clone(self) -> "LinearModel":
        return LinearModel(self.weights, self.bias, self.penalty, self.strength,
                           self.schema_hash)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "family": "linear",
            "schema_hash": self.schema_hash,
            "penalty": self.penalty,
            "strength": self.strength,
            "weights": [float(v) for v in self.weights],
            "bias": self.bias,
        }


class MlpModel(DifferentiableModel):
    """Two dense layers: relu hidden, sigmoid output."""

    def __init__(self, W1, b1, W2, b2, schema_hash: str | None = None):
        self.W1 = np.asarray(W1, dtype=float).copy()
        self.b1 = np.asarray(b1, dtype=float).copy()
        self.W2 = np.asarray(W2, dtype=float).copy()
        self.b2 = float(np.asarray(b2).ravel()[0])
        self.schema_hash = schema_hash

    @property
    def width(self) -> int:
        return self.W1.shape[1]

    def _logits_matrix(self, X: np.ndarray) -> np.ndarray:
        h = X @ self.W1 + self.b1
        return np.maximum(h, 0.0) @ self.W2 + self.b2

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": np.asarray([self.b2])}

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        self.W1 = np.asarray(new["W1"], dtype=float).copy()
        self.b1 = np.asarray(new["b1"], dtype=float).copy()
        self.W2 = np.asarray(new["W2"], dtype=float).copy()
        self.b2 = float(np.asarray(new["b2"]).ravel()[0])

    def logit_backprop(self, X, upstream):
        h = X @ self.W1 + self.b1
        a = np.maximum(h, 0.0)
        dz = np.asarray(upstream, dtype=float)
        dW2 = a.T @ dz
        db2 = dz.sum()
        da = dz[:, None] * self.W2[None, :]
        dh = da * (h > 0)  # relu kink: subgradient 0 at exactly 0
        dW1 = X.T @ dh
        db1 = dh.sum(axis=0)
        return {"W1": dW1, "b1": db1, "W2": dW2, "b2": np.asarray([db2])}

    def clone(self) -> "MlpModel":
        return MlpModel(self.W1, self.b1, self.W2, self.b2, self.schema_hash)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "family": "mlp",
            "schema_hash": self.schema_hash,
            "W1": [[float(v) for v in row] for row in self.W1],
            "b1": [float(v) for v in self.b1],
            "W2": [float(v) for v in self.W2],
            "b2": self.b2,
        }


def init_mlp(d: int, width: int, seed: int, schema_hash: str | None = None) -> MlpModel:
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(d, width))
    b1 = np.zeros(width)
    W2 = rng.normal(0.0, np.sqrt(1.0 / width), size=width)
    return MlpModel(W1, b1, W2, 0.0, schema_hash)


# losses ---------------------------------------------------------------------

def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed on logits for stability."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_grad_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (expit(z) - y) / len(z)


# logistic training ------------------------------------------------------------

def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train_logistic(train: Dataset, penalty: str = "l2", strength: float = 0.0,
                   seed: int = 0, max_iter: int = 2000, tol: float = 1e-6) -> LinearModel:
    """Fit logistic regression by monotone proximal gradient descent.

    `strength` is the direct penalty multiplier lambda: the objective is
    mean BCE + lambda*||w||_1 (l1) or mean BCE + 0.5*lambda*||w||^2 (l2);
    strength 0 (or penalty 'none') is the plain unregularized fit.  The bias
    is never penalized.  Deterministic: zero initialization, Barzilai-Borwein
    step with backtracking so the loss never increases.
    """
    del seed  # fit is deterministic regardless; kept for interface symmetry
    X = train.require_encoded()
    y = train.y.astype(float)
    if len(np.unique(train.y)) < 2:
        raise SingleClassData("logistic training needs both classes")
    if penalty not in ("none", "l1", "l2"):
        raise ValueError(f"penalty must be none/l1/l2, got {penalty!r}")
    lam = 0.0 if penalty == "none" else float(strength)

    d = X.shape[1]
    theta = np.zeros(d + 1)  # [w, b]

    def smooth_value_grad(th):
        w, b = th[:d], th[d]
        z = X @ w + b
        val = bce_from_logits(z, y)
        gz = bce_grad_logits(z, y)
        g = np.empty_like(th)
        g[:d] = X.T @ gz
        g[d] = gz.sum()
        if penalty == "l2" and lam > 0:
            val += 0.5 * lam * float(w @ w)
            g[:d] += lam * w
        return val, g

    def penalty_value(th):
        if penalty == "l1" and lam > 0:
            return lam * float(np.abs(th[:d]).sum())
        return 0.0

    def prox(th, step):
        if penalty == "l1" and lam > 0:
            out = th.copy()
            out[:d] = _soft_threshold(th[:d], step * lam)
            return out
        return th

    f_val, g = smooth_value_grad(theta)
    step = 1.0
    prev_theta = None
    prev_g = None
    for _ in range(max_iter):
        if prev_theta is not None:
            s = theta - prev_theta
            dif = g - prev_g
            denom = float(dif @ dif)
            step = float(s @ dif) / denom if denom > 0 else 1.0
            if not np.isfinite(step) or step <= 0:
                step = 1.0
        # backtracking on the composite objective keeps the descent monotone
        for _bt in range(60):
            cand = prox(theta - step * g, step)
            cand_f, cand_g = smooth_value_grad(cand)
            if cand_f + penalty_value(cand) <= f_val + penalty_value(theta) + 1e-15:
                break
            step *= 0.5
        resid = np.linalg.norm((theta - cand) / max(step, 1e-12), ord=np.inf)
        prev_theta, prev_g = theta, g
        theta, f_val, g = cand, cand_f, cand_g
        if resid < tol:
            break

    model = LinearModel(theta[:d], theta[d], penalty=penalty, strength=lam,
                        schema_hash=train.schema.hash())
    return model


# minibatch engine -------------------------------------------------------------
#
# One loop serves plain BCE training and the penalty-phase optimizer: callers
# inject extra gradient terms per batch.  RNG is consumed identically whether
# or not extras are present, which is what makes a warm-up phase bit-identical
# to a plain BCE run with the same seed.

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: DifferentiableModel) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params().items()},
            v={k: np.zeros_like(p) for k, p in model.params().items()},
        )

    def step(self, model: DifferentiableModel, grads: dict[str, np.ndarray],
             lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.t += 1
        params = model.params()
        new = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = beta1 * self.m[k] + (1 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1 - beta2) * g * g
            mhat = self.m[k] / (1 - beta1 ** self.t)
            vhat = self.v[k] / (1 - beta2 ** self.t)
            new[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
        model.set_params(new)


def minibatch_epochs(model: DifferentiableModel, X: np.ndarray, y: np.ndarray, *,
                     epochs: int, batch_size: int, lr: float,
                     rng: np.random.Generator, adam: AdamState | None = None,
                     batch_extra=None, epoch_hook=None) -> AdamState:
    """Run `epochs` of minibatch Adam on mean BCE.

    batch_extra(model, batch_rows) may return an extra gradient dict added to
    the BCE gradient (same keys).  epoch_hook(epoch, model) runs after each
    epoch.  Returns the Adam state so schedules can continue seamlessly.
    """
    n = len(y)
    if adam is None:
        adam = AdamState.for_model(model)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            Xb, yb = X[rows], y[rows]
            z = model._logits_matrix(Xb)
            gz = (expit(z) - yb) / len(rows)
            grads = model.logit_backprop(Xb, gz)
            if batch_extra is not None:
                extra = batch_extra(model, rows)
                if extra is not None:
                    for k in grads:
                        grads[k] = grads[k] + extra[k]
            adam.step(model, grads, lr)
        if epoch_hook is not None:
            epoch_hook(epoch, model)
    return adam


def train_mlp(train: Dataset, width: int = 128, seed: int = 0, epochs: int = 100,
              batch_size: int = 128, lr: float = 0.1,
              val_fraction: float = 0.1, patience: int = 5) -> MlpModel:
    """Minibatch Adam with early stopping on a held-out validation slice.

    Stops when validation BCE fails to improve for `patience` epochs and
    restores the best parameters seen.
    """
    X = train.require_encoded()
    y = train.y.astype(float)
    if len(np.unique(train.y)) < 2:
        raise SingleClassData("mlp training needs both classes")

    rng = np.random.default_rng(seed)
    model = init_mlp(X.shape[1], width, seed=int(rng.integers(2**31)),
                     schema_hash=train.schema.hash())

    # stratified validation slice
    val_idx = []
    for cls in (0, 1):
        members = np.flatnonzero(train.y == cls)
        k = max(1, int(round(members.size * val_fraction)))
        val_idx.append(rng.permutation(members)[:k])
    val = np.sort(np.concatenate(val_idx))
    fit = np.setdiff1d(np.arange(len(y)), val)
    Xf, yf, Xv, yv = X[fit], y[fit], X[val], y[val]

    best = {k: v.copy() for k, v in model.params().items()}
    best_loss = np.inf
    bad = 0
    adam = AdamState.for_model(model)

    def after_epoch(_epoch, m):
        nonlocal best, best_loss, bad
        vl = bce_from_logits(m._logits_matrix(Xv), yv)
        if vl < best_loss - 1e-9:
            best_loss = vl
            best = {k: v.copy() for k, v in m.params().items()}
            bad = 0
        else:
            bad += 1

    for _ in range(epochs):
        minibatch_epochs(model, Xf, yf, epochs=1, batch_size=batch_size, lr=lr,
                         rng=rng, adam=adam, epoch_hook=after_epoch)
        if bad > patience:
            break
    model.set_params(best)
    return model


# persistence ------------------------------------------------------------------

def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path, schema: FeatureSchema | None = None):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format_version") != FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported model format {d.get('format_version')!r}")
    if schema is not None and d.get("schema_hash") not in (None, schema.hash()):
        raise SchemaMismatch("model was trained against a different encoded schema")
    if d["family"] == "linear":
        return LinearModel(np.asarray(d["weights"], dtype=float), d["bias"],
                           d["penalty"], d["strength"], d["schema_hash"])
    if d["family"] == "mlp":
        return MlpModel(np.asarray(d["W1"]), np.asarray(d["b1"]),
                        np.asarray(d["W2"]), d["b2"], d["schema_hash"])
    raise SchemaMismatch(f"unknown model family {d['family']!r}")


def accuracy(model: ScoringModel, data: Dataset) -> float:
    pred = model.predict(data.require_encoded())
    return float(np.mean(pred.astype(int) == data.y))
