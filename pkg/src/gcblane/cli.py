"""Command-line workflow: prepare, train, finetune, evaluate, predict,
gradcheck, ablation, graph.

One run config JSON ({"model": {...}, "train": {...}, "paths": {...}})
drives every command; individual flags override file values. The effective
merged config is echoed into the output directory so any run can be
reproduced from its artifacts.

Exit codes: 0 success; 2 missing/invalid input file; 3 configuration
error; 4 training diverged; 5 metric undefined (single-class evaluation);
1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, set_state
from .dataset import SequenceDataset
from .diagnostics import run_all_checks
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    FastaParseError,
    GcblaneError,
    GraphConstructionError,
    MetricUndefinedError,
    SequenceValidationError,
    ShuffleError,
    TrainingDiverged,
)
from .fasta import parse_fasta
from .graph import build_debruijn, graph_to_json_dict, normalized_path_adjacency
from .manifest import build_manifest, load_manifest, load_split
from .metrics import evaluate as evaluate_dataset
from .metrics import score_dataset
from .model import Model, ModelConfig
from .training import FitResult, TrainConfig, finetune, fit

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4
EXIT_UNDEFINED_METRIC = 5

_INPUT_ERRORS = (
    FastaParseError,
    SequenceValidationError,
    ShuffleError,
    DataError,
    GraphConstructionError,
    CheckpointError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)

METRIC_COLUMNS = ("Accuracy", "ROC-AUC", "PR-AUC", "Precision", "Recall", "F1")
ABLATION_ROWS = (("GCBLANE", "GCBLANE"), ("CBLANE", "CBLANE"), ("GNN", "GNN_ONLY"))


# -- run config -----------------------------------------------------------------

_MODEL_FLAGS = ("variant", "k", "dropout")
_TRAIN_FLAGS = ("batch_size", "lr_init", "epochs", "seed", "early_stop_patience", "aux_loss_weight")


def _load_config_file(path: str | None) -> dict:
    doc = {"model": {}, "train": {}, "paths": {}}
    if path is None:
        return doc
    file = Path(path)
    if not file.is_file():
        raise FileNotFoundError(f"config file not found: {file}")
    try:
        loaded = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{file}: config is not valid JSON ({exc})") from None
    if not isinstance(loaded, dict):
        raise ConfigError(f"{file}: config must be a JSON object")
    unknown = set(loaded) - {"model", "train", "paths"}
    if unknown:
        raise ConfigError(f"{file}: unknown top-level config keys: {sorted(unknown)}")
    for section in doc:
        value = loaded.get(section, {})
        if not isinstance(value, dict):
            raise ConfigError(f"{file}: section {section!r} must be an object")
        doc[section].update(value)
    return doc


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig, dict]:
    """Merge config file and flags (flags win) into validated configs."""
    doc = _load_config_file(getattr(args, "config", None))
    for flag in _MODEL_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            doc["model"][flag] = value
    for flag in _TRAIN_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            doc["train"][flag] = value

    model_cfg = ModelConfig.from_dict(doc["model"])
    known_train = set(TrainConfig.__dataclass_fields__)
    unknown = set(doc["train"]) - known_train
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    train_cfg = TrainConfig(**doc["train"])
    return model_cfg, train_cfg, doc["paths"]


def _echo_config(out_dir: Path, model_cfg: ModelConfig, train_cfg: TrainConfig, paths: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"model": model_cfg.to_dict(), "train": asdict(train_cfg), "paths": paths}
    (out_dir / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# -- shared data loading ----------------------------------------------------------


def _manifest_location(arg: str) -> tuple[Path, Path]:
    """Accept a manifest.json path or the directory that contains one."""
    path = Path(arg)
    if path.is_dir():
        return path / "manifest.json", path
    return path, path.parent


def _load_split_records(manifest_args: list[str], split: str):
    records = []
    for arg in manifest_args:
        manifest_path, base_dir = _manifest_location(arg)
        manifest = load_manifest(manifest_path)
        records.extend(load_split(manifest, split, base_dir))
    return records


def _write_log(out_dir: Path, result: FitResult) -> None:
    with (out_dir / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def _print_fit_summary(result: FitResult) -> None:
    for record in result.records:
        print(
            f"epoch {record.epoch:3d} {record.split:5s} "
            f"loss={record.loss:.4f} accuracy={record.accuracy:.4f} lr={record.current_lr:g}"
        )
    print(f"best validation loss {result.best_val_loss:.4f} at epoch {result.best_epoch}")


def _train_common(args, train_cfg_default=None) -> int:
    model_cfg, train_cfg, paths = _resolve_configs(args)
    if train_cfg_default is not None:
        train_cfg = train_cfg_default(train_cfg)
    out_dir = Path(args.out)

    train_records = _load_split_records(args.manifest, "train")
    val_records = _load_split_records(args.manifest, "val")
    train_data = SequenceDataset(train_records, k=model_cfg.k)
    val_data = SequenceDataset(val_records, k=model_cfg.k)
    print(f"training on {train_data.size} sequences, validating on {val_data.size}")

    if getattr(args, "checkpoint", None):
        model = load_checkpoint(args.checkpoint, expected_config=model_cfg if args.config else None)
        model_cfg = model.config
        runner = finetune
    else:
        model = Model(model_cfg, seed=train_cfg.seed)
        runner = fit

    _echo_config(out_dir, model_cfg, train_cfg, dict(paths, out=str(out_dir)))
    result = runner(model, train_data, val_data, train_cfg)
    set_state(model, result.best_state)
    save_checkpoint(model, out_dir / "model.ckpt")
    _write_log(out_dir, result)
    _print_fit_summary(result)
    print(f"checkpoint written to {out_dir / 'model.ckpt'}")
    if result.diverged:
        print("training diverged; best checkpoint before divergence was kept", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# -- commands ----------------------------------------------------------------------


def cmd_prepare(args) -> int:
    positives = Path(args.positives)
    if not positives.is_file():
        raise FileNotFoundError(f"positives FASTA not found: {positives}")
    out = Path(args.out)
    manifest = build_manifest(positives, args.seed, out, name=args.name)

    # Cache the per-length normalized adjacency; every window of length L
    # shares the same chain graph so this is all the graph prework there is.
    lengths = sorted({len(rec.bases) for rec in load_split(manifest, "train", out)}
                     | {len(rec.bases) for rec in load_split(manifest, "val", out)}
                     | {len(rec.bases) for rec in load_split(manifest, "test", out)})
    cache = {f"length_{L}": normalized_path_adjacency(L - args.k + 1) for L in lengths}
    np.savez(out / "graph_cache.npz", k=np.int64(args.k), **cache)

    counts = {split: len(manifest.split_entries(split)) for split in ("train", "val", "test")}
    print(f"manifest {manifest.name}: {len(manifest.entries)} entries "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _train_common(args)


def cmd_finetune(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")

    def schedule(cfg: TrainConfig) -> TrainConfig:
        merged = asdict(cfg)
        if args.epochs is None:
            merged["epochs"] = 50
        if args.early_stop_patience is None:
            merged["early_stop_patience"] = 5
        return TrainConfig(**merged)

    return _train_common(args, train_cfg_default=schedule)


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    records = _load_split_records(args.manifest, args.split)
    data = SequenceDataset(records, k=model.config.k)
    report = evaluate_dataset(model, data, out_dir=args.out, batch_size=args.batch_size or 128)
    print(f"{args.split} split, {data.size} sequences:")
    for key in ("accuracy", "precision", "recall", "f1", "roc_auc", "pr_auc"):
        print(f"  {key:9s} {getattr(report, key):.4f}")
    if args.out:
        print(f"report files written to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    fasta = Path(args.fasta)
    if not fasta.is_file():
        raise FileNotFoundError(f"FASTA not found: {fasta}")
    records = parse_fasta(fasta)
    data = SequenceDataset(records, k=model.config.k, require_labels=False)
    scores = score_dataset(model, data, batch_size=args.batch_size or 128)
    lines = ["id,prob_no_binding,prob_binding"]
    for rec_id, score in zip(data.ids, scores):
        lines.append(f"{rec_id},{1.0 - score:.6f},{score:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"predictions for {data.size} sequences written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rows = run_all_checks(seeds=range(args.seeds), tol=args.tol)
    width = max(len(row["layer"]) for row in rows)
    failed = 0
    for row in rows:
        status = "PASS" if row["passed"] else "FAIL"
        failed += 0 if row["passed"] else 1
        print(f"{row['layer']:<{width}s} seed {row['seed']} max_rel_error {row['max_rel_error']:.3e} {status}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed at tol {args.tol:g}")
    return EXIT_OK if failed == 0 else EXIT_UNEXPECTED


def cmd_ablation(args) -> int:
    model_cfg, train_cfg, paths = _resolve_configs(args)
    out_dir = Path(args.out)
    train_data = SequenceDataset(_load_split_records(args.manifest, "train"), k=model_cfg.k)
    val_data = SequenceDataset(_load_split_records(args.manifest, "val"), k=model_cfg.k)
    test_records = _load_split_records(args.manifest, "test")

    results = {}
    diverged = False
    for row_name, variant in ABLATION_ROWS:
        cfg = ModelConfig.from_dict(dict(model_cfg.to_dict(), variant=variant))
        model = Model(cfg, seed=train_cfg.seed)
        print(f"[{row_name}] training ({model.parameter_count()} parameters)")
        result = fit(model, train_data, val_data, train_cfg)
        diverged = diverged or result.diverged
        set_state(model, result.best_state)
        variant_dir = out_dir / row_name.lower()
        save_checkpoint(model, variant_dir / "model.ckpt")
        _write_log(variant_dir, result)
        test_data = SequenceDataset(test_records, k=cfg.k)
        report = evaluate_dataset(model, test_data, out_dir=variant_dir)
        results[row_name] = {
            "Accuracy": report.accuracy, "ROC-AUC": report.roc_auc, "PR-AUC": report.pr_auc,
            "Precision": report.precision, "Recall": report.recall, "F1": report.f1,
        }

    _echo_config(out_dir, model_cfg, train_cfg, dict(paths, out=str(out_dir)))
    (out_dir / "ablation.json").write_text(
        json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    header = "Model    " + "  ".join(f"{c:>9s}" for c in METRIC_COLUMNS)
    print(header)
    for row_name, _ in ABLATION_ROWS:
        cells = "  ".join(f"{results[row_name][c]:9.4f}" for c in METRIC_COLUMNS)
        print(f"{row_name:<9s}{cells}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_graph(args) -> int:
    if args.bases:
        bases = args.bases
    else:
        fasta = Path(args.fasta)
        if not fasta.is_file():
            raise FileNotFoundError(f"FASTA not found: {fasta}")
        records = parse_fasta(fasta)
        if args.id:
            matches = [r for r in records if r.id == args.id]
            if not matches:
                raise DataError(f"record {args.id!r} not found in {fasta}")
            bases = matches[0].bases
        else:
            bases = records[0].bases
    dump = json.dumps(graph_to_json_dict(build_debruijn(bases, k=args.k)), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(dump, encoding="utf-8")
        print(f"graph written to {args.out}")
    else:
        sys.stdout.write(dump)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config JSON ({model, train, paths}); flags override it")
    parser.add_argument("--variant", choices=("GCBLANE", "CBLANE", "GNN_ONLY"))
    parser.add_argument("--k", type=int, help="k-mer order for the graph branch")
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", dest="lr_init", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--patience", dest="early_stop_patience", type=int)
    parser.add_argument("--aux-loss-weight", dest="aux_loss_weight", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcblane",
        description="Sequence-only transcription factor binding site prediction.",
        epilog="exit codes: 0 ok, 2 bad input file, 3 bad config, 4 diverged, 5 metric undefined, 1 unexpected",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (default: GCBLANE_THREADS or library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build negatives, splits, and manifest from positive FASTA")
    p.add_argument("--positives", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model from scratch on one or more manifests")
    p.add_argument("--manifest", action="append", required=True,
                   help="manifest.json or its directory; repeat to pool datasets")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a manifest split and write the metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-sequence binding probabilities for a FASTA file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fasta", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference verification of every layer")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablation", help="train and compare GCBLANE, CBLANE, and GNN variants")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("graph", help="dump the k-mer graph of a sequence as JSON")
    p.add_argument("--fasta")
    p.add_argument("--bases", help="literal sequence instead of a FASTA file")
    p.add_argument("--id", help="record id to pick from the FASTA (default: first)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_graph)

    return parser


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("GCBLANE_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_cap(args.threads)
    if args.command == "graph" and not (args.fasta or args.bases):
        raise ConfigError("graph needs --fasta or --bases")
    return args.func(args)


def entrypoint(argv=None) -> int:
    try:
        return main(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MetricUndefinedError as exc:
        print(f"metric undefined: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED_METRIC
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GcblaneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(entrypoint())
