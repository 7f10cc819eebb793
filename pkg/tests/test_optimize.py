import csv

import numpy as np
import pytest
from scipy.special import expit

from decision_sparsity.errors import DivergedLoss, NoPositiveQueries
from decision_sparsity.models import LinearModel, bce_from_logits, init_mlp, minibatch_epochs
from decision_sparsity.optimize import (
    OptConfig,
    _single_alignment_scores,
    allopt_train,
    gradient_check,
    loss_pos_ref,
    loss_sev_all_opt,
    total_loss_parts,
    value_and_grad_closure,
    write_history_csv,
)
from decision_sparsity.preprocessing import Feature, FeatureSchema
from decision_sparsity.references import IdentityEmbedding, ReferenceSet
from decision_sparsity.sev import Reference

from conftest import random_numeric_dataset


def two_feature_schema():
    return FeatureSchema(
        features=[Feature("a", "numeric"), Feature("b", "numeric")], label="y",
        groups=[[0], [1]], encoded_columns=["a", "b"],
        standardization={0: (0.0, 1.0), 1: (0.0, 1.0)})


def test_loss_sev_hand_computed():
    schema = two_feature_schema()
    model = LinearModel(np.array([1.0, 1.0]), 0.0, schema_hash=schema.hash())
    ref = Reference("r", np.array([-3.0, -2.0]))
    # q1: both single alignments flip -> floored at 0.5
    # q2: best alignment still scores sigmoid(2) -> contributes that value
    q1 = np.array([3.0, 1.0])
    q2 = np.array([5.0, 5.0])
    want = (0.5 + expit(2.0)) / 2.0
    got = loss_sev_all_opt(model, np.stack([q1, q2]), ref, schema)
    assert np.isclose(got, want, atol=1e-12)
    # a per-row reference matrix gives the same result as the shared Reference
    R = np.tile(ref.values, (2, 1))
    assert loss_sev_all_opt(model, np.stack([q1, q2]), R, schema) == got


def test_loss_sev_exact_half_counts_as_floor():
    schema = two_feature_schema()
    model = LinearModel(np.array([1.0, 1.0]), 0.0, schema_hash=schema.hash())
    # aligning feature a lands exactly on logit 0 -> score 0.5 -> at the floor
    q = np.array([1.0, 3.0])
    ref = Reference("r", np.array([-3.0, -2.0]))
    assert loss_sev_all_opt(model, q[None, :], ref, schema) == 0.5


def test_loss_pos_ref_hand_computed():
    schema = two_feature_schema()
    model = LinearModel(np.array([1.0, 1.0]), 0.0, schema_hash=schema.hash())
    R = np.array([[-3.0, -2.0], [1.0, 0.0]])
    # first row scores sigmoid(-5) -> floored at 0.45; second scores sigmoid(1)
    want = 0.45 + expit(1.0)
    assert np.isclose(loss_pos_ref(model, R, theta=0.05), want, atol=1e-12)
    assert np.isclose(loss_pos_ref(model, Reference("r", R[0]), theta=0.05), 0.45,
                      atol=1e-12)
    assert loss_pos_ref(model, np.empty((0, 2)), theta=0.05) == 0.0


def test_total_loss_composition():
    ds = random_numeric_dataset(11, n=80, d=3)
    model = LinearModel(np.array([0.4, -0.7, 0.2]), 0.1, schema_hash=ds.schema.hash())
    ref = Reference("mean", ds.X[ds.y == 0].mean(axis=0))
    config = OptConfig(c1=2.0, c2=3.0)
    parts = total_loss_parts(model, ds, ref, config)
    assert np.isclose(parts.total, parts.bce + 2.0 * parts.sev + 3.0 * parts.pos_ref,
                      atol=1e-12)
    assert np.isclose(parts.bce, bce_from_logits(model._logits_matrix(ds.X),
                                                 ds.y.astype(float)), atol=1e-12)
    # a shared reference is tiled per positive row, so the penalty scales with them
    n_pos = int((ds.y == 1).sum())
    per_row = loss_pos_ref(model, ref.values[None, :], theta=config.theta)
    assert np.isclose(parts.pos_ref, n_pos * per_row, atol=1e-9)


def test_opt_config_validation():
    with pytest.raises(ValueError):
        OptConfig(c1=-0.5)
    with pytest.raises(ValueError):
        OptConfig(theta=0.0)
    with pytest.raises(ValueError):
        OptConfig(theta=0.5)
    OptConfig(c1=0.0, c2=0.0, theta=0.49)


def test_loss_sev_requires_queries():
    schema = two_feature_schema()
    model = LinearModel(np.zeros(2), 0.0, schema_hash=schema.hash())
    with pytest.raises(NoPositiveQueries):
        loss_sev_all_opt(model, np.empty((0, 2)), np.zeros(2), schema)


def _tie_free(model, ds, R, config, margin=1e-3):
    """Reject points where a min/max switch sits within finite-difference reach."""
    pos = np.flatnonzero(ds.y == 1)
    s = _single_alignment_scores(model, ds.X[pos], R, ds.schema)
    srt = np.sort(s, axis=1)
    if srt.shape[1] >= 2 and np.any(srt[:, 1] - srt[:, 0] < margin):
        return False
    if np.any(np.abs(srt[:, 0] - 0.5) < margin):
        return False
    rs = np.asarray(model.score(R), dtype=float)
    return not np.any(np.abs(rs - (0.5 - config.theta)) < margin)


def test_gradient_matches_finite_differences():
    config = OptConfig(c1=1.7, c2=0.9)
    checked = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        ds = random_numeric_dataset(seed, n=40, d=3)
        if seed % 3 == 0:
            model = init_mlp(3, width=5, seed=seed, schema_hash=ds.schema.hash())
        else:
            model = LinearModel(rng.normal(0, 0.8, 3), float(rng.normal(0, 0.3)),
                                schema_hash=ds.schema.hash())
        pos = np.flatnonzero(ds.y == 1)
        R = ds.X[ds.y == 0][:1].repeat(len(pos), axis=0)
        if not _tie_free(model, ds, R, config):
            continue
        fn = value_and_grad_closure(model, ds, R, config)
        err = gradient_check(fn, model.params_flat(), epsilon=1e-5)
        assert err <= 1e-4
        checked += 1
        if checked >= 10:
            break
    assert checked >= 10


def test_warmup_is_bit_identical_to_plain_bce():
    ds = random_numeric_dataset(21, n=200, d=4)
    config = OptConfig(warmup_epochs=10, penalty_epochs=0, seed=3,
                       track_history_sev=False)
    res = allopt_train("linear", ds, "single", config)
    plain = LinearModel(np.zeros(4), 0.0, schema_hash=ds.schema.hash())
    rng = np.random.default_rng(3)
    minibatch_epochs(plain, ds.X, ds.y.astype(float), epochs=10, batch_size=128,
                     lr=0.1, rng=rng)
    assert np.array_equal(res.model.weights, plain.weights)
    assert res.model.bias == plain.bias


def test_warmup_trajectory_ignores_pending_penalty_phase():
    ds = random_numeric_dataset(22, n=150, d=3)
    base = dict(warmup_epochs=6, seed=5, track_history_sev=False)
    bare = allopt_train("linear", ds, "single", OptConfig(penalty_epochs=0, **base))
    full = allopt_train("linear", ds, "single", OptConfig(penalty_epochs=4, **base))
    for a, b in zip(bare.history, full.history[:6]):
        assert a["phase"] == b["phase"] == "warmup"
        assert a["bce"] == b["bce"]
        assert a["train_acc"] == b["train_acc"]


def test_history_rows_and_phases():
    ds = random_numeric_dataset(23, n=120, d=3)
    config = OptConfig(warmup_epochs=4, penalty_epochs=3, seed=0)
    res = allopt_train("linear", ds, "single", config)
    assert [r["epoch"] for r in res.history] == list(range(7))
    assert [r["phase"] for r in res.history] == ["warmup"] * 4 + ["penalty"] * 3
    for row in res.history:
        assert np.isfinite(row["bce"])
        assert 0.0 <= row["train_acc"] <= 1.0
        # single mode builds its reference before warm-up, so the surrogate
        # columns are live from the first epoch
        assert np.isfinite(row["sev_loss"])
        assert np.isfinite(row["pos_ref_loss"])
        assert row["sev_loss"] >= 0.5


def test_penalty_phase_keeps_reference_negative_and_tightens_surrogate():
    ds = random_numeric_dataset(24, n=300, d=4)
    config = OptConfig(c1=2.0, warmup_epochs=25, penalty_epochs=15, seed=1,
                       track_history_sev=False)
    res = allopt_train("linear", ds, "single", config)
    last_warm = res.history[24]["sev_loss"]
    final = res.history[-1]["sev_loss"]
    assert final <= last_warm + 1e-9
    assert float(res.model.score(res.references.values)) < 0.5


def test_write_history_csv_roundtrip(tmp_path):
    ds = random_numeric_dataset(25, n=100, d=3)
    res = allopt_train("linear", ds, "single",
                       OptConfig(warmup_epochs=2, penalty_epochs=1, seed=0))
    path = tmp_path / "history.csv"
    write_history_csv(res.history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == [
        "epoch", "phase", "bce", "sev_loss", "pos_ref_loss", "train_acc", "mean_sev"]
    assert len(rows) == 3
    assert rows[0]["phase"] == "warmup" and rows[-1]["phase"] == "penalty"
    assert np.isclose(float(rows[1]["bce"]), res.history[1]["bce"], atol=1e-12)


def test_cluster_mode_reclusters_on_schedule():
    ds = random_numeric_dataset(26, n=250, d=4)
    config = OptConfig(warmup_epochs=3, penalty_epochs=6, recluster_interval=3,
                       clusters=3, seed=0, track_history_sev=False)
    res = allopt_train("linear", ds, "cluster", config)
    stamps = [n for n in res.notes if n.startswith("reclustered")]
    assert stamps == ["reclustered at penalty epoch 0", "reclustered at penalty epoch 3"]
    assert isinstance(res.references, ReferenceSet)


def test_training_assignment_ignores_active_flags():
    from decision_sparsity.optimize import _assign_rows

    schema = two_feature_schema()
    refs = ReferenceSet(
        references=[Reference("c0", np.array([0.0, 0.0])),
                    Reference("c1", np.array([10.0, 10.0]))],
        scores=[0.9, 0.1], active=[False, True], member_counts=[5, 5],
        embedding=IdentityEmbedding(), schema=schema)
    Xpos = np.array([[1.0, 1.0], [9.0, 9.0]])
    picked = _assign_rows("cluster", refs, Xpos)
    # nearest centroid wins even though it is deactivated
    assert np.array_equal(picked[0], refs.references[0].values)
    assert np.array_equal(picked[1], refs.references[1].values)


def test_memberless_centroids_are_skipped_in_assignment():
    from decision_sparsity.optimize import _assign_rows

    schema = two_feature_schema()
    refs = ReferenceSet(
        references=[Reference("c0", np.array([0.0, 0.0])),
                    Reference("c1", np.array([10.0, 10.0]))],
        scores=[0.2, 0.1], active=[True, True], member_counts=[0, 5],
        embedding=IdentityEmbedding(), schema=schema)
    picked = _assign_rows("cluster", refs, np.array([[1.0, 1.0]]))
    assert np.array_equal(picked[0], refs.references[1].values)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_loss_carries_history():
    ds = random_numeric_dataset(27, n=60, d=3)
    config = OptConfig(warmup_epochs=6, penalty_epochs=0, step=1e308,
                       track_history_sev=False)
    with pytest.raises(DivergedLoss) as err:
        allopt_train("linear", ds, "single", config)
    assert err.value.epoch >= 0
    assert isinstance(err.value.history, list)


def test_allopt_rejects_bad_modes_and_all_negative_data():
    ds = random_numeric_dataset(28, n=60, d=3)
    with pytest.raises(ValueError):
        allopt_train("linear", ds, "both")
    with pytest.raises(ValueError):
        allopt_train("forest", ds, "single")
    from dataclasses import replace

    allneg = replace(ds, y=np.zeros(ds.n, dtype=np.int8))
    with pytest.raises(NoPositiveQueries):
        allopt_train("linear", allneg, "single",
                     OptConfig(warmup_epochs=1, penalty_epochs=0))
