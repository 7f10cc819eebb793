"""Command-line pipeline: prep, train, refs build/audit, explain, tree-sev,
topt, optimize, report.

Every command is seed-deterministic: identical config produces byte-identical
record/summary files.  Wall-clock information lives in a `meta.json` sidecar
(and per-record `ms` is a 0.0 placeholder unless --timing is passed, which is
documented as breaking byte-reproducibility).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
The only environment variable honored is DECISION_SPARSITY_OUT, the default
parent directory for --out when a command does not specify one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, DataError, MissingRun, SparsityError
from .models import accuracy, load_model, save_model, train_logistic, train_mlp
from .preprocessing import Dataset, FeatureSchema, encode_and_standardize, load_csv, stratified_split

OUT_ENV = "DECISION_SPARSITY_OUT"


# plumbing ----------------------------------------------------------------------

def _json_dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _float(x):
    return None if x is None else float(x)


def _resolve_out(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    base = os.environ.get(OUT_ENV)
    if not base:
        raise ConfigError(f"--out not given and {OUT_ENV} is unset")
    return Path(base) / default_name


def _write_meta(out: Path, started: float, extra: dict | None = None) -> None:
    meta = {
        "wall_seconds": time.time() - started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    if extra:
        meta.update(extra)
    _json_dump(meta, out / "meta.json")


def load_prep(prep_dir) -> tuple[Dataset, Dataset]:
    """Re-encode the persisted raw splits with the fitted schema."""
    prep_dir = Path(prep_dir)
    schema_path = prep_dir / "schema.yaml"
    if not schema_path.exists():
        raise ConfigError(f"no schema.yaml under {prep_dir}")
    schema = FeatureSchema.load(schema_path)
    spec_path = prep_dir / "schema_declared.yaml"
    decl = spec_path if spec_path.exists() else schema_path
    train_raw = load_csv(prep_dir / "train.csv", decl)
    test_raw = load_csv(prep_dir / "test.csv", decl)
    train = encode_and_standardize(
        Dataset(train_raw.frame, train_raw.y, schema, role="train"), fitted=schema)
    test = encode_and_standardize(
        Dataset(test_raw.frame, test_raw.y, schema, role="test"), fitted=schema)
    return train, test


def _records_jsonl(records, path: Path, timing: bool) -> None:
    with open(path, "w") as fh:
        for r in records:
            row = {
                "query_id": r.query_id,
                "reference_id": r.reference_id,
                "sev": r.sev,
                "changed": [
                    {"feature": c.feature, "from": c.from_value, "to": c.to_value}
                    for c in r.changed
                ],
                "linf_numeric": _float(r.linf_numeric),
                "l0": r.l0,
                "log_likelihood": _float(r.log_likelihood),
                "ms": round(r.ms, 3) if timing else 0.0,
            }
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


# commands ----------------------------------------------------------------------

def cmd_prep(args) -> int:
    started = time.time()
    out = _resolve_out(args, "prep")
    out.mkdir(parents=True, exist_ok=True)
    full = load_csv(args.data, args.schema)
    train_raw, test_raw = stratified_split(full, args.test_fraction, args.seed)
    train = encode_and_standardize(train_raw)

    # raw rows round-trip through CSV; the fitted schema carries the statistics
    for name, part in (("train.csv", train_raw), ("test.csv", test_raw)):
        frame = part.frame.copy()
        frame[full.schema.label] = part.y
        frame.to_csv(out / name, index=False)
    train.schema.save(out / "schema.yaml")
    import shutil

    shutil.copy(args.schema, out / "schema_declared.yaml")
    _json_dump(
        {
            "n_total": full.n,
            "n_train": train_raw.n,
            "n_test": test_raw.n,
            "n_encoded_columns": train.schema.n_encoded,
            "positive_rate_train": float(train_raw.y.mean()),
            "positive_rate_test": float(test_raw.y.mean()),
            "test_fraction": args.test_fraction,
            "seed": args.seed,
        },
        out / "prep.json",
    )
    _write_meta(out, started)
    print(f"prep: {train_raw.n} train / {test_raw.n} test rows, "
          f"{train.schema.n_encoded} encoded columns -> {out}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    train, test = load_prep(args.prep)
    family = args.family
    if family in ("logistic", "logistic_l1", "logistic_l2"):
        penalty = {"logistic": "none", "logistic_l1": "l1", "logistic_l2": "l2"}[family]
        if args.strength is not None:
            lam = args.strength
        elif penalty != "none":
            lam = 1.0 / (args.inverse_c * train.n)
        else:
            lam = 0.0
        model = train_logistic(train, penalty=penalty, strength=lam, seed=args.seed)
    elif family == "mlp":
        model = train_mlp(train, width=args.width, seed=args.seed, epochs=args.epochs)
    else:
        raise ConfigError(f"unknown family {family!r}")
    out = Path(args.out) if args.out else _resolve_out(args, "model") / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    tr, te = accuracy(model, train), accuracy(model, test)
    print(f"train: {family} train_acc={tr:.4f} test_acc={te:.4f} -> {out} "
          f"({time.time() - started:.1f}s)")
    return 0


def cmd_refs_build(args) -> int:
    from .references import FlexConfig, ReferenceSet, SskmConfig, flex_reference_set, make_embedding, sskm_cluster
    from .sev import build_mean_mode_reference

    started = time.time()
    train, _ = load_prep(args.prep)
    model = load_model(args.model, train.schema)
    out = _resolve_out(args, "refs")

    if args.mode == "mean":
        ref = build_mean_mode_reference(train)
        score = float(model.score(ref.values))
        emb = make_embedding("identity")
        emb.fit(train.require_encoded())
        refset = ReferenceSet(
            references=[ref], scores=[score], active=[score < 0.5],
            member_counts=[int((train.y == 0).sum())], embedding=emb,
            schema=train.schema, notes=["mean/mode of train negatives"],
        )
    elif args.mode == "cluster":
        cfg = SskmConfig(clusters=args.clusters, fuzzifier=args.fuzzifier,
                         seed=args.seed, embedding=args.embedding)
        refset = sskm_cluster(train, model, cfg)
    else:
        raise ConfigError(f"refs mode must be mean/cluster, got {args.mode!r}")

    if args.flex is not None:
        refset = flex_reference_set(
            refset, train, model,
            FlexConfig(epsilon=args.flex, grid=args.grid, seed=args.seed))

    refset.save(out)
    with open(out / "build.json", "w") as fh:
        json.dump({"mode": args.mode, "flex": args.flex, "grid": args.grid,
                   "clusters": args.clusters, "seed": args.seed,
                   "active": refset.active}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_meta(out, started)
    n_active = sum(refset.active)
    print(f"refs build: {len(refset.references)} references ({n_active} active) -> {out}")
    return 0


def cmd_refs_audit(args) -> int:
    from .references import ReferenceSet, audit_references

    train, _ = load_prep(args.prep)
    model = load_model(args.model, train.schema)
    refset = ReferenceSet.load(args.refs, train.schema, model)
    report = audit_references(refset, model, train.schema)
    sys.stdout.write(report.to_text(train.schema))
    return 0


def cmd_explain(args) -> int:
    from .references import ReferenceSet
    from .sev import ExplainOptions, explain_batch, summarize_metrics

    started = time.time()
    train, test = load_prep(args.prep)
    model = load_model(args.model, train.schema)
    refset = ReferenceSet.load(args.refs, train.schema, model)
    queries = test if args.split == "test" else train

    density = None
    walk_threshold = None
    quantile = args.walk_quantile
    if args.credibility or quantile is not None:
        from .credibility import fit_gmm, pick_threshold

        density = fit_gmm(train, k=args.gmm_components, seed=args.seed)
        if quantile is not None:
            walk_threshold = pick_threshold(train, density, quantile)

    options = ExplainOptions(
        k_max=None if args.exhaustive else args.k_max,
        jobs=args.jobs, density=density, walk_threshold=walk_threshold,
    )
    records = explain_batch(model, queries, refset, options)
    out = _resolve_out(args, "run_explain")
    out.mkdir(parents=True, exist_ok=True)
    _records_jsonl(records, out / "records.jsonl", args.timing)

    n_queries = int(np.asarray(model.predict(queries.require_encoded())).sum())
    summary = {
        "variant": args.variant,
        "split": args.split,
        "n_rows": queries.n,
        "n_positive_queries": n_queries,
        "n_explained": len(records),
        "n_unexplained": n_queries - len(records),
        "k_max": None if args.exhaustive else args.k_max,
        "accuracy": accuracy(model, queries),
        "walk_quantile": quantile,
        "walk_threshold": _float(walk_threshold),
        "seed": args.seed,
    }
    if records:
        m = summarize_metrics(records)
        summary.update({
            "mean_sev": m.mean_sev,
            "median_linf_numeric": m.median_linf,
            "mean_log_likelihood": _float(m.mean_log_likelihood),
        })
    else:
        summary.update({"mean_sev": None, "median_linf_numeric": None,
                        "mean_log_likelihood": None, "flagged": "no positive queries"})
    _json_dump(summary, out / "summary.json")
    _write_meta(out, started)
    mean_sev = summary["mean_sev"]
    print(f"explain: {len(records)} records, mean_sev="
          f"{mean_sev if mean_sev is None else f'{mean_sev:.4f}'} -> {out}")
    return 0


def cmd_tree_sev(args) -> int:
    from .sev import ChangedFeature, ExplanationRecord, linf_numeric, summarize_metrics
    from .preprocessing import decode_row
    from .trees import (
        TreeModel,
        all_leaf_boxes,
        leaf_credibility,
        preprocess_negative_paths,
        sev_t,
        sev_t_explanation_point,
        train_cart,
    )

    started = time.time()
    train, test = load_prep(args.prep)
    if args.tree:
        tree = TreeModel.load(args.tree, train.schema)
        tree.attach_training_data(train)
    else:
        tree = train_cart(train, max_depth=args.max_depth,
                          min_leaf_support=args.min_leaf, seed=args.seed)
    index = preprocess_negative_paths(tree)
    boxes = all_leaf_boxes(tree)

    out = _resolve_out(args, "run_tree_sev")
    out.mkdir(parents=True, exist_ok=True)
    tree.save(out / "tree.json")

    X = test.require_encoded()
    records = []
    creds = []
    for i in np.flatnonzero(tree.predict(X)):
        t0 = time.perf_counter()
        res = sev_t(tree, index, X[i], boxes=boxes)
        point = sev_t_explanation_point(tree, X[i], res.leaf_path)
        creds.append(leaf_credibility(tree, res.leaf_path))
        q_dec = decode_row(X[i], train.schema)
        p_dec = decode_row(point, train.schema)
        changed = [ChangedFeature(f, q_dec[f], p_dec[f]) for f in res.changed_features]
        records.append(ExplanationRecord(
            query_id=int(i), reference_id=f"leaf:{res.leaf_path or 'root'}",
            mask=None, sev=res.sev, changed=changed,
            linf_numeric=linf_numeric(X[i], point, train.schema),
            l0=res.sev, ms=(time.perf_counter() - t0) * 1000.0,
        ))
    _records_jsonl(records, out / "records.jsonl", args.timing)

    summary = {
        "variant": args.variant,
        "split": "test",
        "n_positive_queries": len(records),
        "train_accuracy": accuracy(tree, train),
        "accuracy": accuracy(tree, test),
        "tree_depth": tree.depth(),
        "tree_nodes": tree.node_count(),
        "min_leaf_credibility": min(creds) if creds else None,
        "seed": args.seed,
    }
    if records:
        m = summarize_metrics(records)
        summary.update({"mean_sev": m.mean_sev, "median_linf_numeric": m.median_linf,
                        "mean_log_likelihood": None})
    else:
        summary.update({"mean_sev": None, "median_linf_numeric": None,
                        "mean_log_likelihood": None})
    _json_dump(summary, out / "summary.json")
    _write_meta(out, started)
    print(f"tree-sev: {len(records)} records, mean_sev="
          f"{summary['mean_sev']} -> {out}")
    return 0


def cmd_topt(args) -> int:
    from .sev import summarize_metrics
    from .trees import preprocess_negative_paths, sev_t, topt, all_leaf_boxes

    started = time.time()
    train, test = load_prep(args.prep)
    result = topt(train, test, depth_bound=args.depth, accuracy_slack=args.slack,
                  max_features=args.max_features, rounds=args.rounds,
                  min_leaf_support=args.min_leaf, seed=args.seed)
    tree = result.tree
    out = _resolve_out(args, "run_topt")
    out.mkdir(parents=True, exist_ok=True)
    tree.save(out / "tree.json")

    index = preprocess_negative_paths(tree)
    boxes = all_leaf_boxes(tree)
    X = test.require_encoded()
    sevs = [sev_t(tree, index, X[i], boxes=boxes).sev
            for i in np.flatnonzero(tree.predict(X))]

    summary = {
        "variant": args.variant,
        "pool_size": result.pool_size,
        "n_binary_features": result.n_features,
        "depth_bound": args.depth,
        "accuracy_slack": args.slack,
        "mean_sev_train": result.mean_sev_t,
        "mean_sev": float(np.mean(sevs)) if sevs else None,
        "median_linf_numeric": None,
        "mean_log_likelihood": None,
        "train_accuracy": accuracy(tree, train),
        "accuracy": accuracy(tree, test),
        "best_pool_correct": result.best_correct,
        "chosen_correct": result.chosen_correct,
        "notes": result.notes,
        "seed": args.seed,
    }
    _json_dump(summary, out / "summary.json")
    _write_meta(out, started)
    print(f"topt: pool={result.pool_size} mean_sev_train={result.mean_sev_t:.4f} "
          f"test_acc={summary['accuracy']:.4f} -> {out}")
    return 0


def cmd_optimize(args) -> int:
    from .optimize import OptConfig, allopt_train, write_history_csv
    from .sev import ExplainOptions, explain_batch, summarize_metrics

    started = time.time()
    train, test = load_prep(args.prep)
    config = OptConfig(
        c1=args.c1, c2=args.c2, theta=args.theta,
        warmup_epochs=args.warmup, penalty_epochs=args.penalty,
        batch_size=args.batch_size, step=args.step,
        recluster_interval=args.recluster, clusters=args.clusters,
        seed=args.seed, track_history_sev=not args.no_history_sev,
    )
    result = allopt_train(args.family, train, reference_mode=args.mode,
                          config=config, width=args.width)
    out = _resolve_out(args, "run_optimize")
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out / "model.json")
    write_history_csv(result.history, out / "history.csv")

    post = None
    try:
        records = explain_batch(result.model, test, result.references,
                                ExplainOptions(k_max=None))
        if records:
            post = summarize_metrics(records)
    except SparsityError:
        records = []
    summary = {
        "variant": args.variant,
        "family": args.family,
        "reference_mode": args.mode,
        "train_accuracy": accuracy(result.model, train),
        "accuracy": accuracy(result.model, test),
        "mean_sev": post.mean_sev if post else None,
        "median_linf_numeric": post.median_linf if post else None,
        "mean_log_likelihood": None,
        "n_explained": len(records),
        "warmup_epochs": config.warmup_epochs,
        "penalty_epochs": config.penalty_epochs,
        "c1": config.c1, "c2": config.c2, "theta": config.theta,
        "seed": config.seed,
        "notes": result.notes,
    }
    _json_dump(summary, out / "summary.json")
    _write_meta(out, started)
    print(f"optimize: test_acc={summary['accuracy']:.4f} "
          f"mean_sev={summary['mean_sev']} -> {out}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        path = Path(run) / "summary.json"
        if not path.exists():
            raise MissingRun(f"no summary.json under {run}")
        with open(path) as fh:
            s = json.load(fh)
        rows.append({
            "run": str(run),
            "variant": s.get("variant") or "?",
            "mean_sev": s.get("mean_sev"),
            "median_linf_numeric": s.get("median_linf_numeric"),
            "mean_log_likelihood": s.get("mean_log_likelihood"),
            "accuracy": s.get("accuracy"),
        })

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    header = ["variant", "mean_sev", "median_linf_numeric", "mean_log_likelihood",
              "accuracy", "run"]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join(fmt(r[c]) for c in header))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"report: {len(rows)} rows -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# argument surface ----------------------------------------------------------------

@dataclass
class RunConfig:
    """Merged view of config-file values and command-line flags."""

    command: str
    values: dict

    def apply(self, args: argparse.Namespace) -> argparse.Namespace:
        for key, val in self.values.items():
            attr = key.replace("-", "_")
            if getattr(args, attr, None) is None and hasattr(args, attr):
                setattr(args, attr, val)
        return args


def _load_config(path: str | None, command: str) -> RunConfig:
    if not path:
        return RunConfig(command, {})
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(p) as fh:
        data = yaml.safe_load(fh) or {}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {command!r} must be a mapping")
    return RunConfig(command, section)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config with per-command sections; flags override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sev",
        description="Sparse explanation values for binary tabular classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="split + encode a CSV against a schema")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--test-fraction", type=float, default=None)

    p = sub.add_parser("train", help="fit a scoring model on a prep directory")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--family", default=None,
                   choices=["logistic", "logistic_l1", "logistic_l2", "mlp"])
    p.add_argument("--strength", type=float, default=None,
                   help="direct penalty multiplier; overrides --inverse-c")
    p.add_argument("--inverse-c", type=float, default=None,
                   help="sklearn-style C; strength becomes 1/(C*n_train)")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    refs = sub.add_parser("refs", help="reference-set building and auditing")
    refs_sub = refs.add_subparsers(dest="refs_command", required=True)

    p = refs_sub.add_parser("build")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", default=None, choices=["mean", "cluster"])
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--fuzzifier", type=float, default=None)
    p.add_argument("--embedding", default=None)
    p.add_argument("--flex", type=float, default=None,
                   help="flexibility quantile; enables the per-feature search")
    p.add_argument("--grid", type=int, default=None)

    p = refs_sub.add_parser("audit")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--refs", required=True)

    p = sub.add_parser("explain", help="explain positively predicted rows")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--split", default=None, choices=["test", "train"])
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--credibility", action="store_true",
                   help="fit a negative-class mixture and record log-likelihoods")
    p.add_argument("--gmm-components", type=int, default=None)
    p.add_argument("--walk-quantile", type=float, default=None,
                   help="credible-walk threshold quantile (implies --credibility)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--timing", action="store_true",
                   help="real per-record ms (breaks byte-reproducibility)")
    p.add_argument("--variant", default=None)

    p = sub.add_parser("tree-sev", help="tree classifier explanations")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--tree", default=None, help="explain an existing tree file")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=None)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--variant", default=None)

    p = sub.add_parser("topt", help="pick the sparsest near-optimal shallow tree")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--slack", type=float, default=None)
    p.add_argument("--max-features", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=None)
    p.add_argument("--variant", default=None)

    p = sub.add_parser("optimize", help="warm-up + penalized sparsity training")
    _add_common(p)
    p.add_argument("--prep", required=True)
    p.add_argument("--family", default=None, choices=["linear", "mlp"])
    p.add_argument("--mode", default=None, choices=["single", "cluster"])
    p.add_argument("--c1", type=float, default=None)
    p.add_argument("--c2", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--penalty", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--recluster", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--no-history-sev", action="store_true")
    p.add_argument("--variant", default=None)

    p = sub.add_parser("report", help="merge run summaries into a TSV table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default=None)

    return parser


_DEFAULTS = {
    "prep": {"test_fraction": 0.2, "seed": 7},
    "train": {"family": "logistic_l2", "inverse_c": 0.01, "width": 128,
              "epochs": 100, "seed": 0},
    "refs_build": {"mode": "mean", "clusters": 4, "fuzzifier": 2.0,
                   "embedding": "pca2", "grid": 20, "seed": 0},
    "refs_audit": {"seed": 0},
    "explain": {"split": "test", "k_max": 6, "gmm_components": 4, "jobs": 1,
                "seed": 0, "variant": "sev1"},
    "tree_sev": {"max_depth": 4, "min_leaf": 5, "seed": 0, "variant": "sev_t"},
    "topt": {"depth": 3, "slack": 0.01, "max_features": 14, "rounds": 50,
             "min_leaf": 5, "seed": 0, "variant": "topt"},
    "optimize": {"family": "linear", "mode": "single", "c1": 1.0, "c2": 1.0,
                 "theta": 0.05, "warmup": 80, "penalty": 20, "batch_size": 128,
                 "step": 0.1, "recluster": 5, "clusters": 4, "width": 128,
                 "seed": 0, "variant": "allopt"},
}


def _command_key(args) -> str:
    if args.command == "refs":
        return f"refs_{args.refs_command}"
    return args.command.replace("-", "_")


def _dispatch(args) -> int:
    key = _command_key(args)
    if key != "report":
        config = _load_config(getattr(args, "config", None), key)
        config.apply(args)
        for k, v in _DEFAULTS.get(key, {}).items():
            if getattr(args, k, None) is None:
                setattr(args, k, v)
    handlers = {
        "prep": cmd_prep,
        "train": cmd_train,
        "refs_build": cmd_refs_build,
        "refs_audit": cmd_refs_audit,
        "explain": cmd_explain,
        "tree_sev": cmd_tree_sev,
        "topt": cmd_topt,
        "optimize": cmd_optimize,
        "report": cmd_report,
    }
    return handlers[key](args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as e:
        _stderr_error(e)
        return 2
    except FileNotFoundError as e:
        _stderr_error(ConfigError(f"missing file: {e}"))
        return 2
    except DataError as e:
        _stderr_error(e)
        return 3
    except SparsityError as e:
        _stderr_error(e)
        return 4


def _stderr_error(e: Exception) -> None:
    sys.stderr.write(json.dumps(
        {"error": type(e).__name__, "message": str(e)}, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
