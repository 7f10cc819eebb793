"""Tree classifiers and tree-shaped sparse explanations.

For a tree, the sparse explanation value of a positive query equals the
minimum number of original features that must change to land in a negatively
predicted leaf.  The preprocessing pass records, for every internal node, the
L/R routes to negative leaves beneath it; the query procedure walks the
query's own decision path upward, scoring each candidate leaf by how many of
its path conditions the query fails (a feature constrained twice counts
once, and conditions the query already satisfies cost nothing).  Each leaf's
condition conjunction is kept as a per-feature box (numeric interval, or
allowed level set for one-hot groups), which makes the failed-condition count
exact by construction.

Also here: a greedy CART learner (the baseline substrate), and a bounded
exhaustive search over near-optimal shallow trees that returns the pool
member with the lowest mean tree-SEV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyPool,
    InfeasibleConditions,
    NoNegativeLeaf,
    QueryNotPositive,
    SingleClassData,
)
from .models import ScoringModel
from .preprocessing import Dataset, FeatureSchema

TREE_FORMAT_VERSION = 1


@dataclass
class TreeNode:
    support: int
    pos: int
    feature: int | None = None      # encoded column; None -> leaf
    threshold: float | None = None  # route left iff x[feature] <= threshold
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    path: str = ""
    # leaf-only training stats, used to pick concrete explanation values
    medians: np.ndarray | None = None
    level_modes: list[int] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def prediction(self) -> int:
        # positive iff pos fraction >= 0.5; integer arithmetic keeps it exact
        return 1 if 2 * self.pos >= self.support else 0

    @property
    def score_value(self) -> float:
        return self.pos / self.support if self.support else 0.5


class TreeModel(ScoringModel):
    """Binary threshold tree over encoded columns.

    Leaf score is the training positive fraction, so the shared predict rule
    (score >= 0.5) agrees with majority leaf labeling, ties positive.
    """

    def __init__(self, root: TreeNode, n_columns: int, schema: FeatureSchema | None = None,
                 min_leaf_support: int = 1, n_negative_train: int | None = None,
                 schema_hash: str | None = None):
        self.root = root
        self.n_columns = n_columns
        self.schema = schema
        self.min_leaf_support = min_leaf_support
        self.n_negative_train = n_negative_train
        self.schema_hash = schema_hash
        _assign_paths(root, "")

    # scoring -------------------------------------------------------------

    def _score_matrix(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))

        def descend(node: TreeNode, rows: np.ndarray):
            if node.is_leaf:
                out[rows] = node.score_value
                return
            goes_left = X[rows, node.feature] <= node.threshold
            descend(node.left, rows[goes_left])
            descend(node.right, rows[~goes_left])

        descend(self.root, np.arange(len(X)))
        return out

    def leaf_for(self, x: np.ndarray) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def leaves(self) -> list[TreeNode]:
        out: list[TreeNode] = []

        def walk(node: TreeNode):
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def internal_nodes(self) -> list[TreeNode]:
        out: list[TreeNode] = []

        def walk(node: TreeNode):
            if not node.is_leaf:
                out.append(node)
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def node_at(self, path: str) -> TreeNode:
        node = self.root
        for ch in path:
            node = node.left if ch == "L" else node.right
        return node

    def depth(self) -> int:
        return max((len(l.path) for l in self.leaves()), default=0)

    def node_count(self) -> int:
        return len(self.leaves()) + len(self.internal_nodes())

    # persistence ----------------------------------------------------------

    def to_dict(self) -> dict:
        def node_dict(node: TreeNode) -> dict:
            d = {"support": node.support, "pos": node.pos}
            if node.is_leaf:
                if node.medians is not None:
                    d["medians"] = [float(v) for v in node.medians]
                if node.level_modes is not None:
                    d["level_modes"] = [int(v) for v in node.level_modes]
            else:
                d["feature"] = int(node.feature)
                d["threshold"] = float(node.threshold)
                d["left"] = node_dict(node.left)
                d["right"] = node_dict(node.right)
            return d

        return {
            "format_version": TREE_FORMAT_VERSION,
            "n_columns": self.n_columns,
            "min_leaf_support": self.min_leaf_support,
            "n_negative_train": self.n_negative_train,
            "schema_hash": self.schema_hash,
            "root": node_dict(self.root),
        }

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema | None = None) -> "TreeModel":
        def build(nd: dict) -> TreeNode:
            if "feature" in nd:
                return TreeNode(
                    support=int(nd["support"]), pos=int(nd["pos"]),
                    feature=int(nd["feature"]), threshold=float(nd["threshold"]),
                    left=build(nd["left"]), right=build(nd["right"]),
                )
            node = TreeNode(support=int(nd["support"]), pos=int(nd["pos"]))
            if "medians" in nd:
                node.medians = np.asarray(nd["medians"], dtype=float)
            if "level_modes" in nd:
                node.level_modes = [int(v) for v in nd["level_modes"]]
            return node

        root = collapse_trivial(build(d["root"]))
        return cls(root, int(d["n_columns"]), schema,
                   int(d.get("min_leaf_support", 1)), d.get("n_negative_train"),
                   d.get("schema_hash"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, schema: FeatureSchema | None = None) -> "TreeModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), schema)

    def attach_training_data(self, data: Dataset) -> None:
        """Recompute node supports and leaf stats from a dataset (useful after
        loading an externally trained tree)."""
        X = data.require_encoded()
        schema = data.schema or self.schema

        def walk(node: TreeNode, rows: np.ndarray):
            node.support = int(rows.size)
            node.pos = int(data.y[rows].sum())
            if node.is_leaf:
                _fill_leaf_stats(node, X[rows], schema)
                return
            goes_left = X[rows, node.feature] <= node.threshold
            walk(node.left, rows[goes_left])
            walk(node.right, rows[~goes_left])

        walk(self.root, np.arange(len(X)))
        self.schema = schema
        self.n_negative_train = int((data.y == 0).sum())


def _assign_paths(node: TreeNode, path: str) -> None:
    node.path = path
    if not node.is_leaf:
        _assign_paths(node.left, path + "L")
        _assign_paths(node.right, path + "R")


def collapse_trivial(node: TreeNode) -> TreeNode:
    """Merge sibling leaves that share a prediction (recursively, bottom-up)."""
    if node.is_leaf:
        return node
    node.left = collapse_trivial(node.left)
    node.right = collapse_trivial(node.right)
    if (node.left.is_leaf and node.right.is_leaf
            and node.left.prediction == node.right.prediction):
        merged = TreeNode(support=node.support, pos=node.pos)
        if node.left.medians is not None and node.right.medians is not None:
            # approximate merged stats: support-weighted midpoint of medians
            w = node.left.support / max(node.support, 1)
            merged.medians = w * node.left.medians + (1 - w) * node.right.medians
            merged.level_modes = list(node.left.level_modes or [])
        return merged
    return node


def _fill_leaf_stats(node: TreeNode, rows: np.ndarray, schema: FeatureSchema | None) -> None:
    if rows.size == 0:
        return
    node.medians = np.median(rows, axis=0)
    if schema is not None:
        modes = []
        for j, f in enumerate(schema.features):
            if f.kind == "numeric":
                modes.append(0)
                continue
            cols = schema.groups[j]
            counts = rows[:, cols].sum(axis=0)
            base = len(rows) - counts.sum()
            tallies = np.concatenate([[base], counts])
            modes.append(int(np.argmax(tallies)))
        node.level_modes = modes


# CART ---------------------------------------------------------------------------

def _gini_best_split(Xcol: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float] | None:
    """Best (impurity_decrease, threshold) for one column, or None."""
    order = np.argsort(Xcol, kind="stable")
    xs, ys = Xcol[order], y[order]
    n = len(ys)
    pos_prefix = np.cumsum(ys)
    total_pos = pos_prefix[-1]
    # candidate cuts sit between distinct consecutive values
    distinct = np.flatnonzero(xs[1:] > xs[:-1]) + 1  # index of right side start
    if distinct.size == 0:
        return None
    nl = distinct
    nr = n - nl
    ok = (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return None
    nl, nr, cut = nl[ok], nr[ok], distinct[ok]
    pl = pos_prefix[cut - 1]
    pr = total_pos - pl
    gini_l = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
    gini_r = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
    parent = 1.0 - (total_pos / n) ** 2 - ((n - total_pos) / n) ** 2
    decrease = parent - (nl * gini_l + nr * gini_r) / n
    best = int(np.argmax(decrease))  # first max -> lowest threshold on ties
    thr = (xs[cut[best] - 1] + xs[cut[best]]) / 2.0
    return float(decrease[best]), float(thr)


def train_cart(train: Dataset, max_depth: int = 4, min_leaf_support: int = 5,
               seed: int = 0) -> TreeModel:
    """Greedy gini tree.  Deterministic: ties on impurity decrease go to the
    lowest column index, then the lowest threshold; trivial sibling leaves are
    collapsed after building.  `seed` is accepted for interface symmetry."""
    del seed
    X = train.require_encoded()
    y = train.y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClassData("tree training needs both classes")
    schema = train.schema

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        node = TreeNode(support=int(rows.size), pos=int(y[rows].sum()))
        pure = node.pos in (0, node.support)
        if depth >= max_depth or pure or rows.size < 2 * min_leaf_support:
            _fill_leaf_stats(node, X[rows], schema)
            return node
        best = None  # (-decrease, col, thr)
        for c in range(X.shape[1]):
            found = _gini_best_split(X[rows, c], y[rows], min_leaf_support)
            if found is None:
                continue
            dec, thr = found
            key = (-dec, c, thr)
            if dec > 1e-12 and (best is None or key < best):
                best = key
        if best is None:
            _fill_leaf_stats(node, X[rows], schema)
            return node
        _, c, thr = best
        node.feature, node.threshold = c, thr
        goes_left = X[rows, c] <= thr
        node.left = grow(rows[goes_left], depth + 1)
        node.right = grow(rows[~goes_left], depth + 1)
        return node

    root = collapse_trivial(grow(np.arange(len(y)), 0))
    model = TreeModel(root, X.shape[1], schema, min_leaf_support,
                      schema_hash=schema.hash() if schema.fitted else None)
    model.attach_training_data(train)  # exact stats for collapsed leaves too
    return model


# negative-path preprocessing -----------------------------------------------------

@dataclass
class NegativePathIndex:
    """internal-node path -> L/R routes (relative) to negative leaves beneath it."""

    entries: dict[str, list[str]]
    negative_leaf_paths: list[str]

    def paths_under(self, node_path: str) -> list[str]:
        return self.entries.get(node_path, [])


def preprocess_negative_paths(tree: TreeModel) -> NegativePathIndex:
    neg_leaves = [l.path for l in tree.leaves() if l.prediction == 0]
    entries: dict[str, list[str]] = {}
    for node in tree.internal_nodes():
        entries[node.path] = [
            p[len(node.path):] for p in neg_leaves if p.startswith(node.path)
        ]
    return NegativePathIndex(entries=entries, negative_leaf_paths=neg_leaves)


# leaf condition boxes -------------------------------------------------------------

@dataclass
class LeafBox:
    """Per-original-feature conjunction of the leaf's path conditions."""

    numeric: dict[int, tuple[float, float]]     # j -> (lo, hi], initially (-inf, inf)
    levels: dict[int, frozenset[int]]           # j -> allowed level indices

    def violated_features(self, x: np.ndarray, schema: FeatureSchema) -> list[int]:
        out = []
        for j, (lo, hi) in self.numeric.items():
            v = x[schema.groups[j][0]]
            if not (lo < v <= hi):
                out.append(j)
        for j, allowed in self.levels.items():
            if _level_of(x, schema, j) not in allowed:
                out.append(j)
        return sorted(out)


def _level_of(x: np.ndarray, schema: FeatureSchema, j: int) -> int:
    cols = schema.groups[j]
    block = np.asarray([x[c] for c in cols], dtype=float)
    if block.max(initial=0.0) <= 0.5:
        return 0
    return 1 + int(np.argmax(block))


def _level_encoding(schema: FeatureSchema, j: int, level: int) -> np.ndarray:
    cols = schema.groups[j]
    out = np.zeros(len(cols))
    if level > 0:
        out[level - 1] = 1.0
    return out


def leaf_box(tree: TreeModel, leaf_path: str) -> LeafBox:
    """Intersect the conditions along root -> leaf into per-feature constraints.

    If a later condition contradicts the accumulated box (possible only in
    hand-built trees), the deepest condition wins on its own.
    """
    schema = tree.schema
    if schema is None:
        raise InfeasibleConditions("tree has no schema attached")
    col_feature = schema.column_feature()
    box = LeafBox(numeric={}, levels={})
    node = tree.root
    for ch in leaf_path:
        c, t = node.feature, node.threshold
        j = int(col_feature[c])
        go_left = ch == "L"
        if schema.features[j].kind == "numeric":
            lo, hi = box.numeric.get(j, (-np.inf, np.inf))
            if go_left:
                hi = min(hi, t)
            else:
                lo = max(lo, t)
            if lo >= hi:
                lo, hi = ((-np.inf, t) if go_left else (t, np.inf))
            box.numeric[j] = (lo, hi)
        else:
            k_in_group = schema.groups[j].index(c)
            n_levels = len(schema.features[j].levels)

            def satisfies(level: int) -> bool:
                enc = _level_encoding(schema, j, level)[k_in_group]
                return enc <= t if go_left else enc > t
            allowed = box.levels.get(j, frozenset(range(n_levels)))
            new = frozenset(l for l in allowed if satisfies(l))
            if not new:
                new = frozenset(l for l in range(n_levels) if satisfies(l))
                if not new:
                    raise InfeasibleConditions(
                        f"no level of feature {schema.features[j].name!r} satisfies the path"
                    )
            box.levels[j] = new
        node = node.left if go_left else node.right
    return box


def all_leaf_boxes(tree: TreeModel) -> dict[str, LeafBox]:
    return {l.path: leaf_box(tree, l.path) for l in tree.leaves()}


# SEV-T -----------------------------------------------------------------------------

@dataclass
class SevTResult:
    sev: int
    leaf_path: str
    changed_features: list[str]


def sev_t(tree: TreeModel, index: NegativePathIndex, query: np.ndarray, *,
          early_exit: bool = True, boxes: dict[str, LeafBox] | None = None) -> SevTResult:
    """Minimum failed-condition count over negative leaves, visited upward.

    Candidates are taken from the index entries of the query leaf's ancestors,
    deepest first, so nearby leaves are tried before distant ones; the first
    cost-1 hit ends the search when early_exit is on (the count can never be
    zero for a positively predicted query).
    """
    schema = tree.schema
    query = np.asarray(query, dtype=float)
    leaf = tree.leaf_for(query)
    if leaf.prediction != 1:
        raise QueryNotPositive("tree predicts the query negative already")
    if not index.negative_leaf_paths:
        raise NoNegativeLeaf("tree has no negatively predicted leaf")
    if boxes is None:
        boxes = all_leaf_boxes(tree)

    seen: set[str] = set()
    best: tuple[int, str, list[int]] | None = None
    path = leaf.path
    for depth in range(len(path) - 1, -1, -1):
        ancestor = path[:depth]
        for rel in index.paths_under(ancestor):
            target = ancestor + rel
            if target in seen:
                continue
            seen.add(target)
            violated = boxes[target].violated_features(query, schema)
            cost = len(violated)
            if best is None or cost < best[0]:
                best = (cost, target, violated)
                if early_exit and cost == 1:
                    names = [schema.features[j].name for j in best[2]]
                    return SevTResult(sev=1, leaf_path=best[1], changed_features=names)
    names = [schema.features[j].name for j in best[2]]
    return SevTResult(sev=best[0], leaf_path=best[1], changed_features=names)


def sev_t_explanation_point(tree: TreeModel, query: np.ndarray, leaf_path: str) -> np.ndarray:
    """Concrete edited point satisfying the target leaf's conditions.

    Only violated features move.  Numeric edits land on the leaf members'
    training median when stats are available (the median of in-box members is
    itself in the box); otherwise on the finite box endpoint.  Categorical
    edits pick the leaf's mode level among the allowed set, falling back to
    the earliest allowed level.
    """
    schema = tree.schema
    leaf = tree.node_at(leaf_path)
    if leaf.prediction != 0:
        raise InfeasibleConditions("target leaf is not negative")
    box = leaf_box(tree, leaf_path)
    x = np.asarray(query, dtype=float).copy()
    for j in box.violated_features(x, schema):
        cols = schema.groups[j]
        if schema.features[j].kind == "numeric":
            lo, hi = box.numeric[j]
            c = cols[0]
            if leaf.medians is not None and lo < leaf.medians[c] <= hi:
                x[c] = leaf.medians[c]
            elif np.isfinite(hi):
                x[c] = hi
            elif np.isfinite(lo):
                x[c] = lo + 1.0
            # both infinite cannot happen for a violated feature
        else:
            allowed = sorted(box.levels[j])
            level = allowed[0]
            if leaf.level_modes is not None and leaf.level_modes[j] in box.levels[j]:
                level = leaf.level_modes[j]
            x[cols] = _level_encoding(schema, j, level)
    if tree.leaf_for(x).path != leaf_path:
        raise InfeasibleConditions("edited point failed to reach the target leaf")
    return x


def leaf_credibility(tree: TreeModel, leaf_path: str) -> float:
    """Recorded leaf support over the negative training population size."""
    if tree.n_negative_train in (None, 0):
        raise ValueError("tree has no recorded negative training count")
    leaf = tree.node_at(leaf_path)
    return leaf.support / tree.n_negative_train


# threshold guessing + near-optimal tree search --------------------------------------

def stump_thresholds(X: np.ndarray, y: np.ndarray, rounds: int = 50,
                     min_leaf: int = 1) -> list[tuple[int, float]]:
    """(column, threshold) pairs picked by boosted depth-1 stumps, in selection
    order, deduplicated.  Mirrors the usual threshold-guessing preprocessing
    for bounded tree search.

    Stump h(x) = polarity * sign(x > t).  With normalized weights w and
    sw = w*(+1 for positives, -1 for negatives), the weighted error of the
    polarity-plus stump at a cut is (positives left) + (negatives right),
    recoverable from running sums of w and sw.
    """
    n = len(y)
    sign = np.where(y == 1, 1.0, -1.0)
    w = np.full(n, 1.0 / n)
    picked: list[tuple[int, float]] = []
    seen: set[tuple[int, float]] = set()
    orders = [np.argsort(X[:, c], kind="stable") for c in range(X.shape[1])]
    for _ in range(rounds):
        best = None  # (err, col, thr, polarity)
        pos_mass = float(w[y == 1].sum())
        neg_mass = 1.0 - pos_mass
        for c in range(X.shape[1]):
            o = orders[c]
            xs = X[o, c]
            distinct = np.flatnonzero(xs[1:] > xs[:-1]) + 1
            if min_leaf > 1 and distinct.size:
                distinct = distinct[(distinct >= min_leaf) & (n - distinct >= min_leaf)]
            if distinct.size == 0:
                continue
            cum_sw = np.cumsum((sign * w)[o])[distinct - 1]
            cum_w = np.cumsum(w[o])[distinct - 1]
            pos_left = (cum_w + cum_sw) / 2.0
            neg_left = (cum_w - cum_sw) / 2.0
            err_plus = pos_left + (neg_mass - neg_left)
            err = np.minimum(err_plus, 1.0 - err_plus)
            i = int(np.argmin(err))
            polarity = 1 if err_plus[i] <= 1.0 - err_plus[i] else -1
            thr = (xs[distinct[i] - 1] + xs[distinct[i]]) / 2.0
            cand = (float(err[i]), c, float(thr), polarity)
            if best is None or cand < best:
                best = cand
        if best is None:
            break
        err, c, thr, polarity = best
        key = (c, round(thr, 12))
        if key not in seen:
            seen.add(key)
            picked.append((c, thr))
        err = min(max(err, 1e-10), 1 - 1e-10)
        alpha = 0.5 * np.log((1 - err) / err)
        h = np.where(X[:, c] > thr, polarity, -polarity).astype(float)
        w = w * np.exp(-alpha * sign * h)
        w = w / w.sum()
        if err < 1e-9:
            break
    return picked


@dataclass
class ToptResult:
    tree: TreeModel
    pool_size: int
    best_correct: int
    chosen_correct: int
    mean_sev_t: float
    n_features: int
    notes: list[str] = field(default_factory=list)


def _bitset_to_bool(R: int, n: int) -> np.ndarray:
    raw = np.frombuffer(R.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(bool)


def topt(train: Dataset, test: Dataset | None, depth_bound: int = 3,
         accuracy_slack: float = 0.01, *, max_features: int = 14, rounds: int = 50,
         min_leaf_support: int = 5, seed: int = 0) -> ToptResult:
    """Bounded exhaustive search over depth-limited trees on guessed thresholds.

    Enumerates every tree (over the stump-guessed binary features) whose
    training accuracy is within `accuracy_slack` of the best achievable in the
    class, evaluating mean tree-SEV on positively predicted training rows for
    each, and returns the minimizer.  Ties break to higher accuracy, then
    fewer nodes, then discovery order.  Trees without negative leaves or
    without positive predictions cannot be scored and are skipped.
    """
    del seed  # enumeration is deterministic
    X = train.require_encoded()
    y = train.y.astype(np.int64)
    n = len(y)
    feats = stump_thresholds(X, y, rounds=rounds, min_leaf=min_leaf_support)[:max_features]
    if not feats:
        raise EmptyPool("threshold guessing produced no candidate splits")
    F = len(feats)

    bit_cols = np.stack([X[:, c] > t for c, t in feats], axis=1)  # (n, F) bool
    masks = []
    for f in range(F):
        m = 0
        for i in np.flatnonzero(bit_cols[:, f]):
            m |= 1 << int(i)
        masks.append(m)
    pos_mask = 0
    for i in np.flatnonzero(y == 1):
        pos_mask |= 1 << int(i)
    full = (1 << n) - 1

    def pop(b: int) -> int:
        return b.bit_count()

    best_memo: dict[tuple[int, int], int] = {}

    def best_correct(R: int, q: int) -> int:
        key = (R, q)
        got = best_memo.get(key)
        if got is not None:
            return got
        p = pop(R & pos_mask)
        m = pop(R)
        out = max(p, m - p)
        if q > 0:
            for f in range(F):
                L = R & ~masks[f]
                Rt = R & masks[f]
                if pop(L) < min_leaf_support or pop(Rt) < min_leaf_support:
                    continue
                out = max(out, best_correct(L, q - 1) + best_correct(Rt, q - 1))
        best_memo[key] = out
        return out

    top = best_correct(full, depth_bound)
    need = int(np.ceil(top - accuracy_slack * n - 1e-9))

    # tree structures are nested tuples:
    #   ("leaf", rows_bitset, pred)
    #   ("split", f, left, right)
    def enumerate_trees(R: int, q: int, budget: int):
        p = pop(R & pos_mask)
        m = pop(R)
        leaf_correct = max(p, m - p)
        if leaf_correct >= budget:
            yield ("leaf", R, 1 if 2 * p >= m else 0), leaf_correct, 1
        if q == 0:
            return
        for f in range(F):
            L = R & ~masks[f]
            Rt = R & masks[f]
            if pop(L) < min_leaf_support or pop(Rt) < min_leaf_support:
                continue
            lb, rb = best_correct(L, q - 1), best_correct(Rt, q - 1)
            if lb + rb < budget:
                continue
            for lt, lc, ln in enumerate_trees(L, q - 1, budget - rb):
                for rt, rc, rn in enumerate_trees(Rt, q - 1, budget - lc):
                    if lc + rc < budget:
                        continue
                    if (lt[0] == "leaf" and rt[0] == "leaf" and lt[2] == rt[2]):
                        continue  # would collapse to a plain leaf; counted as one
                    yield ("split", f, lt, rt), lc + rc, ln + rn + 1

    # mismatch cost columns: cost_col[f][side] = per-row cost of requiring bit==side
    mismatch = {f: {0: bit_cols[:, f].astype(np.float64),
                    1: (~bit_cols[:, f]).astype(np.float64)} for f in range(F)}

    def tree_leaves(t, conds):
        if t[0] == "leaf":
            yield t[1], t[2], conds
        else:
            _, f, lt, rt = t
            yield from tree_leaves(lt, conds + ((f, 0),))
            yield from tree_leaves(rt, conds + ((f, 1),))

    best_pick = None  # (mean_sev, -correct, nodes, order, tree)
    pool = 0
    skipped = 0
    order = 0
    for t, correct, nodes in enumerate_trees(full, depth_bound, need):
        pool += 1
        order += 1
        pos_rows = 0
        neg_leaves = []
        for R, pred, conds in tree_leaves(t, ()):
            if pred == 1:
                pos_rows |= R
            else:
                neg_leaves.append(conds)
        if not neg_leaves or pos_rows == 0:
            skipped += 1
            continue
        qmask = _bitset_to_bool(pos_rows, n)
        costs = np.full(n, np.inf)
        for conds in neg_leaves:
            c = np.zeros(n)
            for f, side in conds:
                c += mismatch[f][side]
            np.minimum(costs, c, out=costs)
        mean_sev = float(costs[qmask].mean())
        key = (mean_sev, -correct, nodes, order)
        if best_pick is None or key < best_pick[0]:
            best_pick = (key, t, correct)

    if best_pick is None:
        raise EmptyPool("no scoreable tree in the near-optimal pool")
    _, chosen, chosen_correct = best_pick
    assert chosen_correct >= need

    def to_nodes(t) -> TreeNode:
        if t[0] == "leaf":
            R = t[1]
            rows = np.flatnonzero(_bitset_to_bool(R, n))
            node = TreeNode(support=int(rows.size), pos=int(y[rows].sum()))
            _fill_leaf_stats(node, X[rows], train.schema)
            return node
        _, f, lt, rt = t
        c, thr = feats[f]
        left, right = to_nodes(lt), to_nodes(rt)
        return TreeNode(support=left.support + right.support,
                        pos=left.pos + right.pos,
                        feature=c, threshold=thr, left=left, right=right)

    tree = TreeModel(collapse_trivial(to_nodes(chosen)), X.shape[1], train.schema,
                     min_leaf_support, n_negative_train=int((train.y == 0).sum()),
                     schema_hash=train.schema.hash() if train.schema.fitted else None)
    notes = [f"pool size {pool}, skipped {skipped} unscoreable"]
    if test is not None:
        from .models import accuracy

        notes.append(f"test accuracy {accuracy(tree, test):.4f}")
    return ToptResult(
        tree=tree,
        pool_size=pool,
        best_correct=top,
        chosen_correct=chosen_correct,
        mean_sev_t=best_pick[0][0],
        n_features=F,
        notes=notes,
    )
