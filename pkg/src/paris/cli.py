"""Command-line orchestration.

Subcommands:

    synth      generate a synthetic long-tail dataset and dump it to CSV
    prune      run pruning per fold; write retained ids, traces and metrics
    evaluate   retrain an ensemble on given dataset dump(s) and emit metrics
    benchmark  pruned vs full vs random-pruned at the same budget, per fold
    report     re-render a JSON report into tidy CSV tables

Every command writes a ``manifest.json`` (config hash, seed, artifact
checksums) next to its outputs. The output directory comes from the config
file and can be overridden by ``--output-dir`` or the ``PARIS_OUTPUT_DIR``
environment variable (flag wins). Exit codes: 0 success, 1 runtime failure
(partial outputs are flagged incomplete), 2 usage or configuration error.

Fold runs are independent: with ``--jobs > 1`` they execute in separate
processes, and each fold's artifacts are written atomically to its own
subdirectory before the merged report, so a crash loses at most one fold.
"""

import argparse
import csv
import json
import os
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    RunConfig,
    build_manifest,
    config_hash,
    derive_seed,
    parse_config,
)
from .data import (
    CsvSchema,
    WindowSpec,
    apply_normalization,
    build_fold_plans,
    fit_normalization,
    generate_synthetic_longtail,
    ingest_csv,
    load_dataset_csv,
    make_windows,
    split_dataset_by_plan,
)
from .exceptions import ConfigError, ParisError
from .metrics import evaluate_predictions
from .mlp import MlpConfig, ensemble_predict, train_ensemble
from .pruning import PruneConfig, run_paris

# ------------------------------------------------------------ artifact io


def _write_atomic(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload):
    _write_atomic(path, json.dumps(payload, indent=2, sort_keys=True).encode())


def write_lines(path, lines):
    _write_atomic(path, ("\n".join(str(x) for x in lines) + "\n").encode())


def write_csv_rows(path, header, rows):
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    _write_atomic(path, buf.getvalue().encode())


# ------------------------------------------------------------ data loading


def build_dataset(config):
    """Materialize the configured dataset (synthetic or windowed CSV)."""
    if config.data.source == "synthetic":
        s = config.data.synthetic
        return generate_synthetic_longtail(
            seed=config.seed,
            n=s.n,
            tail_exponent=s.tail_exponent,
            noise_sd=s.noise_sd,
            corrupt_fraction=s.corrupt_fraction,
            n_groups=s.n_groups,
        )
    c = config.data.csv
    schema = CsvSchema(
        group_column=c.group_column,
        target_column=c.target_column,
        feature_columns=tuple(c.feature_columns),
        sentinel_limits=dict(c.sentinel_limits),
        delimiter=c.delimiter,
    )
    series = ingest_csv(c.path, schema)
    spec = WindowSpec(
        history_len=config.window.history_len,
        horizon=config.window.horizon,
        feature_names=tuple(c.feature_columns),
    )
    return make_windows(series, spec)


# --------------------------------------------------------------- pipelines


def train_and_evaluate(train, val, eval_sets, config, seed):
    """Train an ensemble on ``train`` and score it on each evaluation set.

    Inputs are z-scored and targets centered with statistics from ``train``;
    predictions are mapped back to physical units before metrics. Returns
    ``{set_name: MetricReport}``.
    """
    norm = fit_normalization(train)
    train_n = apply_normalization(train, norm)
    val_n = apply_normalization(val, norm)
    mlp_config = MlpConfig(
        hidden_sizes=config.mlp.hidden_sizes,
        learning_rate=config.mlp.learning_rate,
        batch_size=config.mlp.batch_size,
        max_epochs=config.mlp.max_epochs,
        patience=config.mlp.patience,
        seed=seed,
    )
    members = train_ensemble(train_n, val_n, mlp_config, config.ensemble_members)
    reports = {}
    for name, ds in eval_sets.items():
        if len(ds) == 0:
            reports[name] = None
            continue
        pred_n = ensemble_predict(members, norm.normalize_inputs(ds.inputs))
        pred = norm.denormalize_targets(pred_n)
        reports[name] = evaluate_predictions(
            ds.targets,
            pred,
            percentiles=config.evaluation.percentiles,
            n_extreme=config.evaluation.n_extreme,
            n_threshold_points=config.evaluation.n_threshold_points,
        )
    return reports


def _reports_to_dict(reports):
    return {k: (r.to_dict() if r is not None else None) for k, r in reports.items()}


def _fold_dirs(config):
    return Path(config.output_dir) / "folds"


def _prune_single_fold(config, fold_index):
    """Prune one fold, write its artifacts, return its summary payload."""
    dataset = build_dataset(config)
    plans = build_fold_plans(
        dataset, config.folds.n_test_groups, config.folds.n_val_groups
    )
    plan = plans[fold_index]
    train, val, test = split_dataset_by_plan(dataset, plan)

    mlp_config = MlpConfig(
        hidden_sizes=config.mlp.hidden_sizes,
        learning_rate=config.mlp.learning_rate,
        batch_size=config.mlp.batch_size,
        max_epochs=config.mlp.max_epochs,
        patience=config.mlp.patience,
        seed=derive_seed(config.seed, f"fold{fold_index}", "mlp"),
    )
    prune_config = PruneConfig(
        prune_fraction_per_cycle=config.prune.prune_fraction_per_cycle,
        total_prune_fraction=config.prune.total_prune_fraction,
        lambda_policy=config.prune.lambda_policy,
        fixed_lambda=config.prune.fixed_lambda,
        positive_delta_policy=config.prune.positive_delta_policy,
    )
    pruned, run_report = run_paris(train, val, prune_config, mlp_config)

    eval_sets = {"val": val, "test": test}
    metrics = {
        "paris": train_and_evaluate(
            pruned, val, eval_sets, config,
            derive_seed(config.seed, f"fold{fold_index}", "paris", "eval"),
        ),
        "baseline": train_and_evaluate(
            train, val, eval_sets, config,
            derive_seed(config.seed, f"fold{fold_index}", "baseline", "eval"),
        ),
    }

    fold_dir = _fold_dirs(config) / f"fold{fold_index}"
    write_lines(fold_dir / "retained_indices.txt", run_report.retained_ids.tolist())
    write_lines(fold_dir / "pruned_indices.txt", run_report.pruned_ids)
    write_json(fold_dir / "trace.json", run_report.to_dict(include_steps=True))
    pruned.save_csv(fold_dir / "pruned_dataset.csv")
    write_json(
        fold_dir / "metrics.json",
        {m: _reports_to_dict(r) for m, r in metrics.items()},
    )

    return {
        "fold": fold_index,
        "test_group": _jsonable(plan.test_group),
        "n_train": len(train),
        "pruned_fraction": run_report.pruned_fraction,
        "retained_ids": [int(i) for i in run_report.retained_ids],
        "run": run_report.to_dict(include_steps=False),
        "metrics": {m: _reports_to_dict(r) for m, r in metrics.items()},
    }


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _prune_fold_worker(payload):
    config, fold_index = payload
    return _prune_single_fold(config, fold_index)


def _run_folds(config, worker, n_folds):
    """Run per-fold work, optionally in parallel; collect results/errors."""
    payloads = [(config, i) for i in range(n_folds)]
    results, errors = [], []
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = list(pool.map(_safe_call, [(worker, p) for p in payloads]))
        for ok, value in futures:
            (results if ok else errors).append(value)
    else:
        for p in payloads:
            ok, value = _safe_call((worker, p))
            (results if ok else errors).append(value)
    return results, errors


def _safe_call(bundle):
    worker, payload = bundle
    try:
        return True, worker(payload)
    except Exception:
        return False, {"fold": payload[1], "error": traceback.format_exc()}


def _metric_value(fold_payload, method, split, field="rmse"):
    report = fold_payload["metrics"].get(method, {}).get(split)
    if report is None:
        return None
    return report[field]


def _aggregate_folds(folds, methods, splits=("val", "test")):
    """Cross-fold mean and sd per method/split, Table-style last row."""
    out = {}
    for method in methods:
        out[method] = {}
        for split in splits:
            values = [
                _metric_value(f, method, split)
                for f in folds
                if _metric_value(f, method, split) is not None
            ]
            if values:
                out[method][split] = {
                    "rmse_mean": float(np.mean(values)),
                    "rmse_sd": float(np.std(values)),
                    "n_folds": len(values),
                }
    return out


def _metrics_csv_rows(folds, methods):
    rows = []
    for f in folds:
        for method in methods:
            for split in ("val", "test"):
                report = f["metrics"].get(method, {}).get(split)
                if report is None:
                    continue
                rows.append(
                    (f["fold"], method, split, "rmse", "", report["rmse"],
                     report["n_samples"])
                )
                for entry in report["crmse_by_percentile"]:
                    rows.append(
                        (f["fold"], method, split, "crmse_percentile",
                         entry["percentile"], entry["crmse"], entry["n_samples"])
                    )
                for entry in report["crmse_by_threshold"]:
                    rows.append(
                        (f["fold"], method, split, "crmse_threshold",
                         entry["threshold"], entry["crmse"], entry["n_samples"])
                    )
    return rows


_METRICS_CSV_HEADER = ("fold", "method", "split", "kind", "key", "value", "n_samples")


# ------------------------------------------------------------ sub-commands


def cmd_synth(config):
    """Generate and dump the configured synthetic dataset."""
    if config.data.source != "synthetic":
        raise ConfigError("synth needs data.source = synthetic")
    out_dir = Path(config.output_dir)
    dataset = build_dataset(config)
    path = out_dir / "dataset.csv"
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.save_csv(path)
    manifest = build_manifest(config, [path], out_dir)
    write_json(out_dir / "manifest.json", manifest)
    return {"dataset": str(path), "n": len(dataset)}


def cmd_prune(config):
    """Prune every fold and write the merged report.

    Returns the report payload; raises on configuration problems. Runtime
    failures in individual folds are captured: their artifacts are missing,
    the report is flagged ``incomplete`` and the process exits 1.
    """
    dataset = build_dataset(config)
    plans = build_fold_plans(dataset, config.folds.n_test_groups, config.folds.n_val_groups)
    results, errors = _run_folds(config, _prune_fold_worker, len(plans))
    results.sort(key=lambda f: f["fold"])

    methods = ("paris", "baseline")
    report = {
        "kind": "prune_report",
        "config_hash": config_hash(config),
        "seed": config.seed,
        "n_folds": len(plans),
        "incomplete": bool(errors),
        "failed_folds": [e["fold"] for e in errors],
        "folds": results,
        "aggregates": _aggregate_folds(results, methods),
        "pruned_fraction_mean": (
            float(np.mean([f["pruned_fraction"] for f in results])) if results else None
        ),
    }
    out_dir = Path(config.output_dir)
    write_json(out_dir / "prune_report.json", report)
    write_csv_rows(
        out_dir / "metrics.csv", _METRICS_CSV_HEADER, _metrics_csv_rows(results, methods)
    )
    artifacts = [out_dir / "prune_report.json", out_dir / "metrics.csv"]
    for f in results:
        fold_dir = _fold_dirs(config) / f"fold{f['fold']}"
        artifacts += [
            fold_dir / "retained_indices.txt",
            fold_dir / "pruned_indices.txt",
            fold_dir / "trace.json",
            fold_dir / "pruned_dataset.csv",
            fold_dir / "metrics.json",
        ]
    write_json(out_dir / "manifest.json", build_manifest(config, artifacts, out_dir))
    if errors:
        for e in errors:
            print(f"fold {e['fold']} failed:\n{e['error']}", file=sys.stderr)
    return report


def cmd_evaluate(config, fold_index=0, train_data=()):
    """Retrain per training set and report metrics keyed by dataset id.

    The fold's full training set is always evaluated under the id ``full``;
    each ``train_data`` dump (e.g. a pruned dataset) adds a comparable entry
    keyed by its file stem. Every entry is scored on the fold's validation
    and test sets.
    """
    for p in train_data:
        if not Path(p).exists():
            raise FileNotFoundError(f"dataset artifact not found: {p}")
    dataset = build_dataset(config)
    plans = build_fold_plans(dataset, config.folds.n_test_groups, config.folds.n_val_groups)
    if not 0 <= fold_index < len(plans):
        raise ConfigError(f"fold {fold_index} out of range ({len(plans)} folds)")
    train, val, test = split_dataset_by_plan(dataset, plans[fold_index])

    entries = {"full": train}
    for p in train_data:
        entries[Path(p).stem] = load_dataset_csv(p)

    payload = {
        "kind": "evaluation_report",
        "config_hash": config_hash(config),
        "seed": config.seed,
        "fold": fold_index,
        "entries": {},
    }
    for name, ds in entries.items():
        reports = train_and_evaluate(
            ds, val, {"val": val, "test": test}, config,
            derive_seed(config.seed, f"fold{fold_index}", name, "eval"),
        )
        payload["entries"][name] = _reports_to_dict(reports)

    out_dir = Path(config.output_dir)
    write_json(out_dir / "evaluation.json", payload)
    rows = []
    for name, splits in payload["entries"].items():
        fake_fold = {"fold": fold_index, "metrics": {name: splits}}
        rows += _metrics_csv_rows([fake_fold], (name,))
    write_csv_rows(out_dir / "evaluation.csv", _METRICS_CSV_HEADER, rows)
    write_json(
        out_dir / "manifest.json",
        build_manifest(
            config, [out_dir / "evaluation.json", out_dir / "evaluation.csv"], out_dir
        ),
    )
    return payload


def _benchmark_fold_worker(payload):
    config, fold_index = payload
    dataset = build_dataset(config)
    plans = build_fold_plans(dataset, config.folds.n_test_groups, config.folds.n_val_groups)
    plan = plans[fold_index]
    train, val, test = split_dataset_by_plan(dataset, plan)

    mlp_config = MlpConfig(
        hidden_sizes=config.mlp.hidden_sizes,
        learning_rate=config.mlp.learning_rate,
        batch_size=config.mlp.batch_size,
        max_epochs=config.mlp.max_epochs,
        patience=config.mlp.patience,
        seed=derive_seed(config.seed, f"fold{fold_index}", "mlp"),
    )
    prune_config = PruneConfig(
        prune_fraction_per_cycle=config.prune.prune_fraction_per_cycle,
        total_prune_fraction=config.prune.total_prune_fraction,
        lambda_policy=config.prune.lambda_policy,
        fixed_lambda=config.prune.fixed_lambda,
        positive_delta_policy=config.prune.positive_delta_policy,
    )
    pruned, run_report = run_paris(train, val, prune_config, mlp_config)

    # random control at the identical budget: remove exactly as many points,
    # chosen uniformly, with a seed derived for this fold
    n_removed = len(run_report.pruned_ids)
    rng = np.random.default_rng(derive_seed(config.seed, f"fold{fold_index}", "random_prune"))
    random_drop = rng.choice(train.original_indices, size=n_removed, replace=False)
    random_train = train.drop_original_ids(random_drop)

    eval_sets = {"val": val, "test": test}
    per_method = {}
    for method, ds in (("paris", pruned), ("baseline", train), ("random", random_train)):
        per_method[method] = _reports_to_dict(
            train_and_evaluate(
                ds, val, eval_sets, config,
                derive_seed(config.seed, f"fold{fold_index}", method, "eval"),
            )
        )

    split_for_winner = "test" if per_method["paris"].get("test") else "val"
    candidates = {
        m: per_method[m][split_for_winner]["rmse"]
        for m in per_method
        if per_method[m].get(split_for_winner)
    }
    winner = min(candidates, key=candidates.get)
    return {
        "fold": fold_index,
        "test_group": _jsonable(plan.test_group),
        "n_train": len(train),
        "n_removed": n_removed,
        "pruned_fraction": run_report.pruned_fraction,
        "metrics": per_method,
        "winner": winner,
        "winner_split": split_for_winner,
    }


def cmd_benchmark(config):
    """Pruned vs full-data vs random-pruned, same budget and seeds."""
    dataset = build_dataset(config)
    plans = build_fold_plans(dataset, config.folds.n_test_groups, config.folds.n_val_groups)
    results, errors = _run_folds(config, _benchmark_fold_worker, len(plans))
    results.sort(key=lambda f: f["fold"])

    methods = ("paris", "baseline", "random")
    report = {
        "kind": "benchmark_report",
        "config_hash": config_hash(config),
        "seed": config.seed,
        "n_folds": len(plans),
        "incomplete": bool(errors),
        "failed_folds": [e["fold"] for e in errors],
        "folds": results,
        "aggregates": _aggregate_folds(results, methods),
    }
    out_dir = Path(config.output_dir)
    write_json(out_dir / "benchmark_report.json", report)
    write_csv_rows(
        out_dir / "metrics.csv", _METRICS_CSV_HEADER, _metrics_csv_rows(results, methods)
    )
    grid_rows = [
        (
            f["fold"],
            *(
                _metric_value(f, m, f["winner_split"])
                for m in methods
            ),
            f["winner"],
            f["pruned_fraction"],
        )
        for f in results
    ]
    write_csv_rows(
        out_dir / "benchmark_grid.csv",
        ("fold", *(f"rmse_{m}" for m in methods), "winner", "pruned_fraction"),
        grid_rows,
    )
    write_json(
        out_dir / "manifest.json",
        build_manifest(
            config,
            [
                out_dir / "benchmark_report.json",
                out_dir / "metrics.csv",
                out_dir / "benchmark_grid.csv",
            ],
            out_dir,
        ),
    )
    if errors:
        for e in errors:
            print(f"fold {e['fold']} failed:\n{e['error']}", file=sys.stderr)
    return report


def cmd_report(input_path, out_dir):
    """Re-render a JSON report into tidy CSV tables."""
    input_path = Path(input_path)
    if not input_path.exists():
        raise FileNotFoundError(f"report not found: {input_path}")
    with open(input_path) as fh:
        payload = json.load(fh)
    kind = payload.get("kind")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if kind in ("prune_report", "benchmark_report"):
        methods = (
            ("paris", "baseline", "random") if kind == "benchmark_report"
            else ("paris", "baseline")
        )
        path = out_dir / "metrics.csv"
        write_csv_rows(path, _METRICS_CSV_HEADER, _metrics_csv_rows(payload["folds"], methods))
        written.append(path)
        agg_path = out_dir / "aggregates.csv"
        rows = [
            (m, s, v["rmse_mean"], v["rmse_sd"], v["n_folds"])
            for m, splits in payload["aggregates"].items()
            for s, v in splits.items()
        ]
        write_csv_rows(agg_path, ("method", "split", "rmse_mean", "rmse_sd", "n_folds"), rows)
        written.append(agg_path)
    elif kind == "evaluation_report":
        rows = []
        for name, splits in payload["entries"].items():
            fake = {"fold": payload.get("fold", 0), "metrics": {name: splits}}
            rows += _metrics_csv_rows([fake], (name,))
        path = out_dir / "evaluation.csv"
        write_csv_rows(path, _METRICS_CSV_HEADER, rows)
        written.append(path)
    else:
        raise ConfigError(f"unknown report kind {kind!r} in {input_path}")
    return {"written": [str(p) for p in written]}


# ------------------------------------------------------------------- main


def _load_config(args):
    config = parse_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = int(args.seed)
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = int(args.jobs)
    out_dir = getattr(args, "output_dir", None) or os.environ.get("PARIS_OUTPUT_DIR")
    if out_dir:
        overrides["output_dir"] = out_dir
    if overrides:
        merged = config.to_dict()
        merged.update(overrides)
        config = RunConfig.from_dict(merged)
    return config


def build_parser():
    parser = argparse.ArgumentParser(
        prog="paris",
        description="Representer-guided training-set pruning for imbalanced regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="YAML/JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=None, help="fold-level parallelism")
        p.add_argument("--output-dir", default=None, help="override output directory")

    add_common(sub.add_parser("synth", help="generate the synthetic dataset"))
    add_common(sub.add_parser("prune", help="run pruning on every fold"))

    p_eval = sub.add_parser("evaluate", help="retrain on dataset dumps and report metrics")
    add_common(p_eval)
    p_eval.add_argument("--fold", type=int, default=0, help="fold index to evaluate on")
    p_eval.add_argument(
        "--train-data",
        action="append",
        default=[],
        help="dataset dump CSV to train on (repeatable); default: the fold's full train set",
    )

    add_common(sub.add_parser("benchmark", help="pruned vs full vs random comparison"))

    p_rep = sub.add_parser("report", help="re-render a JSON report to CSV tables")
    p_rep.add_argument("--input", required=True, help="JSON report path")
    p_rep.add_argument("--out-dir", required=True, help="directory for CSV tables")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.input, args.out_dir)
            return 0
        config = _load_config(args)
        if args.command == "synth":
            cmd_synth(config)
            return 0
        if args.command == "prune":
            report = cmd_prune(config)
            return 1 if report["incomplete"] else 0
        if args.command == "evaluate":
            cmd_evaluate(config, fold_index=args.fold, train_data=args.train_data)
            return 0
        if args.command == "benchmark":
            report = cmd_benchmark(config)
            return 1 if report["incomplete"] else 0
        parser.error(f"unknown command {args.command}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParisError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
