import numpy as np
import pandas as pd
import pytest

from decision_sparsity.errors import NoActiveCentroid
from decision_sparsity.models import LinearModel, train_logistic
from decision_sparsity.preprocessing import (
    Dataset,
    Feature,
    FeatureSchema,
    check_group_atomicity,
    encode_and_standardize,
)
from decision_sparsity.references import (
    FlexConfig,
    IdentityEmbedding,
    PcaEmbedding,
    ReferenceSet,
    SskmConfig,
    _memberships,
    audit_references,
    embedding_from_dict,
    flex_reference_set,
    flexible_search,
    fuzzifier_per_sample,
    make_embedding,
    sskm_cluster,
)
from decision_sparsity.sev import Reference


def blob_dataset(seed=0, n_per=60, centers=((-3, -3), (3, 3), (-3, 3))):
    """Well-separated numeric blobs, all labeled negative, plus positive filler."""
    rng = np.random.default_rng(seed)
    rows = [rng.normal(c, 0.3, (n_per, 2)) for c in centers]
    X = np.vstack(rows)
    n_neg = X.shape[0]
    X = np.vstack([X, rng.normal((8, 8), 0.3, (20, 2))])
    y = np.zeros(X.shape[0], dtype=np.int8)
    y[n_neg:] = 1
    schema = FeatureSchema(
        features=[Feature("u", "numeric"), Feature("v", "numeric")], label="y")
    frame = pd.DataFrame({"u": X[:, 0], "v": X[:, 1]})
    return encode_and_standardize(Dataset(frame, y, schema))


def far_negative_model(ds):
    """Scores the positive filler blob high and everything else low."""
    X = ds.require_encoded()
    w = np.array([1.2, 1.2])
    bias = -float((X[ds.y == 1] @ w).min()) + 0.8
    return LinearModel(w, bias - 1.6, schema_hash=ds.schema.hash())


def test_fuzzifier_formula():
    scores = np.array([0.2, 0.5, 0.75, 1.0])
    m = 2.0
    got = fuzzifier_per_sample(scores, m)
    # below the boundary the fuzzifier bottoms out just above 1
    assert np.isclose(got[0], 1 + 1e-3)
    assert np.isclose(got[1], 1 + 1e-3)
    assert np.isclose(got[2], 1 + 2 * m * 0.25)
    assert np.isclose(got[3], 1 + 2 * m * 0.5)


def test_memberships_rows_sum_to_one():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.1, 5.0, (40, 3))
    mp = fuzzifier_per_sample(rng.uniform(0, 1, 40), 2.0)
    u = _memberships(d, mp)
    assert u.shape == (40, 3)
    assert np.allclose(u.sum(axis=1), 1.0)
    assert np.all(u >= 0)


def test_memberships_zero_distance_split():
    d = np.array([[0.0, 2.0, 0.0], [1.0, 1.0, 1.0]])
    mp = np.array([1.5, 1.5])
    u = _memberships(d, mp)
    assert np.allclose(u[0], [0.5, 0.0, 0.5])
    assert np.allclose(u[1], [1 / 3, 1 / 3, 1 / 3])


def test_sskm_finds_blob_centers():
    ds = blob_dataset()
    model = far_negative_model(ds)
    refset = sskm_cluster(ds, model, SskmConfig(clusters=3, seed=1, embedding="identity"))
    assert len(refset) == 3
    assert all(refset.active)
    X = ds.require_encoded()
    true_centers = []
    for lo in range(0, 180, 60):
        true_centers.append(X[lo:lo + 60].mean(axis=0))
    got = sorted((tuple(np.round(r.values, 1)) for r in refset.references))
    want = sorted(tuple(np.round(c, 1)) for c in true_centers)
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=0.15)
    assert sum(refset.member_counts) == 180


def test_sskm_deactivates_positive_centroids():
    ds = blob_dataset()
    X = ds.require_encoded()
    # plane that cuts one blob off as positive-scored
    w = np.array([2.0, 0.0])
    bias = -float(X[60:120, 0].mean()) * 2.0 + 0.5
    model = LinearModel(w, bias, schema_hash=ds.schema.hash())
    refset = sskm_cluster(ds, model, SskmConfig(clusters=3, seed=1, embedding="identity"))
    scores = [model.score(r.values) for r in refset.references]
    for s, a in zip(scores, refset.active):
        assert a == (s < 0.5)
    assert not all(refset.active)
    assert any("deactivated" in n for n in refset.notes)


def test_sskm_single_cluster_collapses_to_negative_mean():
    ds = blob_dataset()
    model = far_negative_model(ds)
    refset = sskm_cluster(ds, model, SskmConfig(clusters=1, seed=0, embedding="identity"))
    X = ds.require_encoded()
    neg_mean = X[ds.y == 0].mean(axis=0)
    assert np.allclose(refset.references[0].values, neg_mean, atol=1e-6)


def test_sskm_clamps_cluster_count_to_data():
    ds = blob_dataset(n_per=1, centers=((-3, -3), (3, 3)))
    model = far_negative_model(blob_dataset())
    refset = sskm_cluster(ds, model, SskmConfig(clusters=6, seed=0, embedding="identity"))
    assert len(refset) == 2


def test_sskm_categorical_centroids_are_valid_levels(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    refset = sskm_cluster(train, model, SskmConfig(clusters=3, seed=0, embedding="identity"))
    vals = np.vstack([r.values for r in refset.references])
    assert check_group_atomicity(vals, train.schema)


def test_assign_uses_nearest_active(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    refset = sskm_cluster(train, model, SskmConfig(clusters=3, seed=0, embedding="identity"))
    X = train.require_encoded()
    q = X[int(np.argmax(model.score(X)))]
    chosen = refset.assign(q)
    emb = refset.embedding.transform(q[None, :])[0]
    best, best_d = None, np.inf
    for i in refset.active_indices():
        c = refset.embedding.transform(refset.references[i].values[None, :])[0]
        dist = float(np.linalg.norm(emb - c))
        if dist < best_d - 1e-12:
            best, best_d = refset.references[i].id, dist
    assert chosen.id == best


def test_assign_requires_active_centroid():
    ds = blob_dataset()
    refset = ReferenceSet(
        references=[Reference("c0", np.zeros(2))], scores=[0.7], active=[False],
        member_counts=[10], embedding=IdentityEmbedding().fit(np.zeros((2, 2))),
        schema=ds.schema, notes=[])
    with pytest.raises(NoActiveCentroid):
        refset.assign(np.zeros(2))


def test_refset_save_load_rescores_hand_edits(tmp_path, toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    refset = sskm_cluster(train, model, SskmConfig(clusters=3, seed=0, embedding="identity"))
    out = tmp_path / "refs"
    refset.save(out)
    loaded = ReferenceSet.load(out, train.schema, model)
    for a, b in zip(refset.references, loaded.references):
        assert a.id == b.id
        assert np.allclose(a.values, b.values, atol=1e-9)
    assert loaded.active == refset.active

    # hand-edit a stored reference: load must re-encode and re-flag it
    csv = out / "references.csv"
    frame = pd.read_csv(csv)
    frame.loc[0, "priors"] = 60.0  # absurd priors -> positive score
    frame.to_csv(csv, index=False)
    edited = ReferenceSet.load(out, train.schema, model)
    assert edited.scores[0] > refset.scores[0]


def test_pca_embedding_deterministic_and_orthonormal():
    rng = np.random.default_rng(0)
    X = rng.normal(0, 1, (300, 5)) @ np.diag([3, 2, 1, 0.5, 0.1])
    a = PcaEmbedding(2).fit(X)
    b = PcaEmbedding(2).fit(X.copy())
    assert np.array_equal(a.components_, b.components_)
    assert np.allclose(a.components_ @ a.components_.T, np.eye(2), atol=1e-9)
    # sign convention: dominant loading of each component is positive
    for row in a.components_:
        assert row[np.argmax(np.abs(row))] > 0
    back = embedding_from_dict(a.to_dict())
    assert np.allclose(back.transform(X[:7]), a.transform(X[:7]))


def test_make_embedding_specs():
    assert isinstance(make_embedding("identity"), IdentityEmbedding)
    e = make_embedding("pca3")
    assert isinstance(e, PcaEmbedding) and e.k == 3
    with pytest.raises(Exception):
        make_embedding("umap")


def test_flexible_search_monotone_and_bounded(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    X = train.require_encoded()
    neg = X[~model.predict(X)]
    base = Reference("c", neg[0])
    cfg = FlexConfig(epsilon=0.05, grid=20, seed=0)
    flexed = flexible_search(base, train, model, cfg)
    assert model.score(flexed.values) <= model.score(base.values) + 1e-12
    # numeric values stay inside the per-feature quantile window or untouched
    for j, cols in enumerate(train.schema.groups):
        f = train.schema.features[j]
        if f.kind != "numeric":
            assert np.array_equal(flexed.values[cols], base.values[cols])
            continue
        c = cols[0]
        col = np.sort(X[:, c])
        q = np.searchsorted(col, base.values[c], side="left") / len(col)
        lo = np.quantile(col, max(q - cfg.epsilon, 0.0))
        hi = np.quantile(col, min(q + cfg.epsilon, 1.0))
        v = flexed.values[c]
        assert (lo - 1e-9 <= v <= hi + 1e-9) or np.isclose(v, base.values[c])


def test_flexible_search_epsilon_zero_is_identity(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    X = train.require_encoded()
    base = Reference("c", X[~model.predict(X)][0])
    out = flexible_search(base, train, model, FlexConfig(epsilon=0.0, grid=20, seed=0))
    assert np.array_equal(out.values, base.values)


def test_flex_reference_set_flexes_only_active(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    refset = sskm_cluster(train, model, SskmConfig(clusters=4, seed=0, embedding="identity"))
    flexed = flex_reference_set(refset, train, model,
                                FlexConfig(epsilon=0.05, grid=10, seed=0))
    for i, (a, b) in enumerate(zip(refset.references, flexed.references)):
        if refset.active[i]:
            assert flexed.scores[i] <= refset.scores[i] + 1e-12
        else:
            assert np.array_equal(a.values, b.values)
    assert any("flex" in n for n in flexed.notes)


def test_audit_report_layout(toy_splits):
    train, _ = toy_splits
    model = train_logistic(train, penalty="l2", strength=0.02, seed=0)
    refset = sskm_cluster(train, model, SskmConfig(clusters=3, seed=0, embedding="identity"))
    text = audit_references(refset, model, train.schema).to_text(train.schema)
    lines = text.strip().split("\n")
    assert lines[0].startswith("id")
    assert len(lines) == 2 + len(refset)  # header, rule, one row each
    for f in train.schema.features:
        assert f.name in lines[0]
