"""Command-line pipeline: prepare, train, evaluate, predict, report.

All machine-readable outputs land under ``--out``; progress goes to stderr.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import metrics as mt
from . import model as mdl
from . import training as tr
from . import vocab as vc

DATA_DIR_ENV = "RESDTA_DATA_DIR"
CACHE_VERSION = 1
DEFAULT_DATA_FILES = {"drugs": "drugs.tsv", "proteins": "proteins.tsv", "affinities": "affinities.txt"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# configuration handling

def _default_config() -> dict:
    data_dir = os.environ.get(DATA_DIR_ENV, ".")
    return {
        "data": {
            "drugs": str(Path(data_dir) / DEFAULT_DATA_FILES["drugs"]),
            "proteins": str(Path(data_dir) / DEFAULT_DATA_FILES["proteins"]),
            "affinities": str(Path(data_dir) / DEFAULT_DATA_FILES["affinities"]),
            "apply_kiba_transform": False,
            "lenient_unknown_label": None,
            "fold_seed": 42,
            "fold_test_file": None,
            "fold_cv_file": None,
        },
        "model": asdict(mdl.ModelConfig()),
        "train": asdict(tr.TrainConfig()),
    }


def _load_config(args) -> dict:
    config = _default_config()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        user = json.loads(path.read_text(encoding="utf-8"))
        for section in ("data", "model", "train"):
            unknown = set(user.get(section, {})) - set(config[section])
            if unknown:
                raise UsageError(f"unknown {section} config keys: {sorted(unknown)}")
            config[section].update(user.get(section, {}))
    # Flags win over the config file.
    for flag, section, key in [
        ("drugs", "data", "drugs"),
        ("proteins", "data", "proteins"),
        ("affinities", "data", "affinities"),
        ("epochs", "train", "epochs"),
        ("batch_size", "train", "batch_size"),
        ("lr", "train", "lr_initial"),
        ("accumulation_steps", "train", "accumulation_steps"),
        ("seed", "train", "seed"),
        ("seed", "data", "fold_seed"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            config[section][key] = value
    return config


def _model_config(config: dict) -> mdl.ModelConfig:
    return mdl.ModelConfig(**config["model"])


def _train_config(config: dict) -> tr.TrainConfig:
    return tr.TrainConfig(**config["train"])


def _write_snapshot(config: dict, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{command}_config.json").write_text(
        json.dumps(config, indent=2), encoding="utf-8"
    )


def _parse_folds(value: str) -> list[int]:
    if value == "all":
        return list(range(ds.N_CV_FOLDS))
    try:
        folds = sorted({int(part) for part in value.split(",")})
    except ValueError:
        raise UsageError(f"--folds must be 'all' or comma-separated fold ids, got {value!r}")
    if any(not 0 <= f < ds.N_CV_FOLDS for f in folds):
        raise UsageError(f"fold ids must be in [0, {ds.N_CV_FOLDS}), got {folds}")
    return folds


# ---------------------------------------------------------------------------
# prepare

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cache_paths(out_dir: Path) -> dict[str, Path]:
    cache = out_dir / "cache"
    return {
        "drug_tokens": cache / "drug_tokens.npy",
        "protein_tokens": cache / "protein_tokens.npy",
        "pairs": cache / "pairs.npy",
        "affinities": cache / "affinities.npy",
        "ids": cache / "ids.json",
        "fold_test": out_dir / "folds_test.json",
        "fold_cv": out_dir / "folds_cv.json",
        "summary": out_dir / "dataset_summary.json",
        "manifest": out_dir / "prepare_manifest.json",
    }


def _length_summary(lengths: list[int], bins: int = 10) -> dict:
    arr = np.asarray(lengths)
    counts, edges = np.histogram(arr, bins=bins)
    return {
        "min": int(arr.min()),
        "max": int(arr.max()),
        "mean": float(arr.mean()),
        "histogram": {"counts": counts.tolist(), "edges": [float(e) for e in edges]},
    }


def cmd_prepare(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    paths = _cache_paths(out_dir)
    data_cfg = config["data"]

    input_files = {k: Path(data_cfg[k]) for k in ("drugs", "proteins", "affinities")}
    for name, path in input_files.items():
        if not path.exists():
            raise FileNotFoundError(f"{name} file not found: {path}")

    manifest = {
        "version": CACHE_VERSION,
        "inputs": {k: _sha256(p) for k, p in sorted(input_files.items())},
        "encoding": {
            "smiles_len": config["model"]["smiles_len"],
            "protein_len": config["model"]["protein_len"],
            "apply_kiba_transform": data_cfg["apply_kiba_transform"],
            "lenient_unknown_label": data_cfg["lenient_unknown_label"],
        },
        "folds": {
            "seed": data_cfg["fold_seed"],
            "test_file": data_cfg["fold_test_file"],
            "cv_file": data_cfg["fold_cv_file"],
        },
    }
    if not args.force and paths["manifest"].exists():
        existing = json.loads(paths["manifest"].read_text(encoding="utf-8"))
        if existing == manifest and all(p.exists() for p in paths.values()):
            _log("cache up to date")
            return 0

    _write_snapshot(config, out_dir, "prepare")
    _log(f"loading raw dataset from {input_files['affinities'].parent}")
    raw = ds.load_kiba(input_files["drugs"], input_files["proteins"], input_files["affinities"])
    records = ds.encode_dataset(
        raw,
        smiles_len=config["model"]["smiles_len"],
        protein_len=config["model"]["protein_len"],
        apply_transform=data_cfg["apply_kiba_transform"],
        on_unknown=data_cfg["lenient_unknown_label"],
    )

    if data_cfg["fold_test_file"]:
        split = ds.load_fold_files(
            data_cfg["fold_test_file"], data_cfg["fold_cv_file"], len(records)
        )
        _log("loaded external fold files")
    else:
        split = ds.make_folds(len(records), data_cfg["fold_seed"])
    ds.validate_fold_split(split, len(records))

    paths["drug_tokens"].parent.mkdir(parents=True, exist_ok=True)
    np.save(paths["drug_tokens"], records.drug_tokens)
    np.save(paths["protein_tokens"], records.protein_tokens)
    np.save(paths["pairs"], records.pairs)
    np.save(paths["affinities"], records.affinities)
    paths["ids"].write_text(
        json.dumps({"drugs": list(records.drug_ids), "proteins": list(records.protein_ids)}),
        encoding="utf-8",
    )
    ds.save_fold_files(split, paths["fold_test"], paths["fold_cv"])

    summary = {
        "n_drugs": raw.n_drugs,
        "n_proteins": raw.n_proteins,
        "n_interactions": raw.n_interactions,
        "smiles_length": _length_summary([len(s) for _, s in raw.drugs]),
        "protein_length": _length_summary([len(s) for _, s in raw.proteins]),
        "fold_sizes": [len(part) for part in split.parts()],
    }
    paths["summary"].write_text(json.dumps(summary, indent=2), encoding="utf-8")
    paths["manifest"].write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    _log(
        f"prepared {raw.n_drugs} drugs x {raw.n_proteins} proteins, "
        f"{raw.n_interactions} interactions"
    )
    return 0


def _load_cache(out_dir: Path) -> tuple[ds.EncodedInteractions, ds.FoldSplit]:
    paths = _cache_paths(out_dir)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(
            f"prepared cache incomplete under {out_dir} (run prepare first); missing {missing[0]}"
        )
    ids = json.loads(paths["ids"].read_text(encoding="utf-8"))
    records = ds.EncodedInteractions(
        drug_ids=tuple(ids["drugs"]),
        protein_ids=tuple(ids["proteins"]),
        drug_tokens=np.load(paths["drug_tokens"]),
        protein_tokens=np.load(paths["protein_tokens"]),
        pairs=np.load(paths["pairs"]),
        affinities=np.load(paths["affinities"]),
    )
    split = ds.load_fold_files(paths["fold_test"], paths["fold_cv"], len(records))
    return records, split


def _check_encoding_compat(config: mdl.ModelConfig, records: ds.EncodedInteractions) -> None:
    if (
        config.smiles_len != records.drug_tokens.shape[1]
        or config.protein_len != records.protein_tokens.shape[1]
    ):
        raise mdl.ConfigMismatchError(
            "checkpoint sequence lengths do not match the prepared cache"
        )


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    config = _load_config(args)
    folds = _parse_folds(args.folds)
    out_dir = Path(args.out)
    records, split = _load_cache(out_dir)
    model_cfg = _model_config(config)
    train_cfg = _train_config(config)
    _check_encoding_compat(model_cfg, records)
    _write_snapshot(config, out_dir, "train")
    for fold in folds:
        train_idx, val_idx = split.train_val(fold)
        if args.limit is not None:
            train_idx = train_idx[: args.limit]
            val_idx = val_idx[: args.limit]
        fold_dir = out_dir / f"fold{fold}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        _log(f"fold {fold}: {len(train_idx)} train / {len(val_idx)} val records")

        for stale in fold_dir.glob(f"checkpoint_fold{fold}_epoch*.npz"):
            stale.unlink()
        model = mdl.ResDTA(model_cfg, seed=train_cfg.seed + fold)
        model, history = tr.fit(
            model,
            records.subset(train_idx),
            records.subset(val_idx),
            train_cfg,
            checkpoint_path=fold_dir / f"checkpoint_fold{fold}_epoch{{epoch}}.npz",
            log=lambda r, fold=fold: _log(
                f"fold {fold} epoch {r.epoch}: train_rmse={r.train_rmse:.5f} "
                f"val_mse={r.val_mse:.5f} val_ci={r.val_ci:.4f} lr={r.lr:g}"
                + (" (restart)" if r.restarted else "")
            ),
        )
        history.to_csv(fold_dir / "history.csv")
        history.write_summary(fold_dir / "summary.json")
        _log(
            f"fold {fold} done: best epoch {history.best_epoch}, "
            f"best val MSE {history.best_val_mse:.6f}"
        )
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _fold_checkpoint(out_dir: Path, fold: int) -> Path | None:
    # fit() leaves exactly one best checkpoint; pick the highest epoch if a
    # crashed run left strays behind.
    candidates = sorted(
        (out_dir / f"fold{fold}").glob(f"checkpoint_fold{fold}_epoch*.npz"),
        key=lambda p: int(p.stem.rsplit("epoch", 1)[1]),
    )
    return candidates[-1] if candidates else None


def _find_checkpoints(args, out_dir: Path) -> list[tuple[str, Path]]:
    if args.checkpoint:
        return [(Path(c).stem, Path(c)) for c in args.checkpoint]
    found = []
    for fold in _parse_folds(args.folds):
        path = _fold_checkpoint(out_dir, fold)
        if path is not None:
            found.append((f"fold{fold}", path))
    if not found:
        raise FileNotFoundError(f"no checkpoints found under {out_dir} (run train first)")
    return found


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    records, split = _load_cache(out_dir)
    _write_snapshot(config, out_dir, "evaluate")

    test_idx = split.test_indices
    if args.limit is not None:
        test_idx = test_idx[: args.limit]
    test = records.subset(test_idx)
    actual = test.affinities

    per_fold = []
    predictions = []
    names = []
    for name, path in _find_checkpoints(args, out_dir):
        model, _ = mdl.load_checkpoint(path)
        _check_encoding_compat(model.config, records)
        pred = tr.predict(model, test, batch_size=config["train"]["batch_size"])
        per_fold.append(
            (mt.concordance_index(actual, pred), mt.mse(actual, pred), mt.rm2(actual, pred))
        )
        predictions.append(pred)
        names.append(name)
        _log(f"{name}: ci={per_fold[-1][0]:.4f} mse={per_fold[-1][1]:.5f} rm2={per_fold[-1][2]:.4f}")

    report = mt.aggregate(per_fold)
    payload = report.to_dict()
    payload["checkpoints"] = names
    payload["n_test_records"] = len(test)
    if len(predictions) > 1:
        payload["predictions_csv"] = "mean over evaluated checkpoints"
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")

    combined = np.mean(predictions, axis=0)
    _write_predictions_csv(out_dir / "predictions.csv", test, actual, combined)
    _log(
        f"test metrics over {len(names)} checkpoint(s): "
        f"ci={report.mean['ci']:.4f} mse={report.mean['mse']:.5f} rm2={report.mean['rm2']:.4f}"
    )
    return 0


def _write_predictions_csv(path: Path, records: ds.EncodedInteractions, measured, predicted) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug_id", "protein_id", "measured", "predicted"])
        for (d, p), y, yhat in zip(records.pairs, measured, predicted):
            writer.writerow(
                [records.drug_ids[d], records.protein_ids[p], repr(float(y)), repr(float(yhat))]
            )


# ---------------------------------------------------------------------------
# predict

def cmd_predict(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    records, _ = _load_cache(out_dir)
    _write_snapshot(config, out_dir, "predict")

    if args.checkpoint:
        checkpoint = Path(args.checkpoint[0])
    else:
        checkpoint = _fold_checkpoint(out_dir, 0)
        if checkpoint is None:
            raise FileNotFoundError(f"no fold0 checkpoint under {out_dir} (run train first)")
    model, _ = mdl.load_checkpoint(checkpoint)
    _check_encoding_compat(model.config, records)

    drug_index = {d: i for i, d in enumerate(records.drug_ids)}
    protein_index = {p: i for i, p in enumerate(records.protein_ids)}
    pairs = []
    with Path(args.pairs).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ds.ParseError(args.pairs, lineno, "expected drug_id<TAB>protein_id")
            d, p = fields[0].strip(), fields[1].strip()
            if d not in drug_index:
                raise ds.ParseError(args.pairs, lineno, f"unknown drug id {d!r}")
            if p not in protein_index:
                raise ds.ParseError(args.pairs, lineno, f"unknown protein id {p!r}")
            pairs.append((drug_index[d], protein_index[p]))
    if args.limit is not None:
        pairs = pairs[: args.limit]
    if not pairs:
        raise ds.ParseError(args.pairs, 0, "no pairs to predict")

    subset = ds.EncodedInteractions(
        drug_ids=records.drug_ids,
        protein_ids=records.protein_ids,
        drug_tokens=records.drug_tokens,
        protein_tokens=records.protein_tokens,
        pairs=np.asarray(pairs, dtype=np.int64),
        affinities=np.zeros(len(pairs)),
    )
    pred = tr.predict(model, subset, batch_size=config["train"]["batch_size"])

    out_path = out_dir / "pair_predictions.csv"
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug_id", "protein_id", "predicted"])
        for (d, p), yhat in zip(pairs, pred):
            writer.writerow([records.drug_ids[d], records.protein_ids[p], repr(float(yhat))])
    _log(f"wrote {len(pairs)} predictions to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# report

def _read_predictions_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    measured, predicted = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"measured", "predicted"} <= set(reader.fieldnames):
            raise ds.ParseError(path, 1, "predictions CSV needs 'measured' and 'predicted' columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                measured.append(float(row["measured"]))
                predicted.append(float(row["predicted"]))
            except (TypeError, ValueError) as exc:
                raise ds.ParseError(path, lineno, f"bad row: {exc}") from exc
    if not measured:
        raise ds.ParseError(path, 1, "no prediction rows")
    return np.asarray(measured), np.asarray(predicted)


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_path = Path(args.predictions) if args.predictions else out_dir / "predictions.csv"
    if not pred_path.exists():
        raise FileNotFoundError(f"predictions CSV not found: {pred_path}")
    measured, predicted = _read_predictions_csv(pred_path)

    # Scatter-ready copy plus the least-squares line of predicted on measured.
    with (out_dir / "scatter.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["measured", "predicted"])
        for y, yhat in zip(measured, predicted):
            writer.writerow([repr(float(y)), repr(float(yhat))])

    slope, intercept = np.polyfit(measured, predicted, deg=1)
    line = {"slope": float(slope), "intercept": float(intercept)}
    (out_dir / "regression_line.json").write_text(json.dumps(line, indent=2), encoding="utf-8")

    rows = [("n", str(len(measured))), ("mse", f"{mt.mse(measured, predicted):.6f}")]
    degenerate = False
    try:
        rows.append(("ci", f"{mt.concordance_index(measured, predicted):.6f}"))
    except mt.NoComparablePairsError:
        degenerate = True
        rows.append(("ci", "degenerate (constant measured)"))
    try:
        r2, r2_origin = mt.r_squared_pair(measured, predicted)
        rows += [
            ("r2", f"{r2:.6f}"),
            ("r2_origin", f"{r2_origin:.6f}"),
            ("rm2", f"{mt.rm2(measured, predicted):.6f}"),
        ]
    except mt.DegenerateInputError as exc:
        degenerate = True
        rows.append(("r2", f"degenerate ({exc})"))
    rows += [("regression_slope", f"{line['slope']:.6f}"), ("regression_intercept", f"{line['intercept']:.6f}")]

    width = max(len(name) for name, _ in rows)
    table = "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows) + "\n"
    (out_dir / "metrics_table.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    if degenerate:
        _log("warning: correlation metrics degenerate for these predictions")

    if args.plot:
        _render_scatter(out_dir / "scatter.png", measured, predicted, line)
        _log(f"wrote {out_dir / 'scatter.png'}")
    return 0


def _render_scatter(path: Path, measured, predicted, line) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise UsageError("--plot requires matplotlib (pip install resdta[plot])") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(measured, predicted, s=4, alpha=0.4)
    xs = np.array([measured.min(), measured.max()])
    ax.plot(xs, line["slope"] * xs + line["intercept"], color="red", linewidth=1.5)
    ax.set_xlabel("measured affinity")
    ax.set_ylabel("predicted affinity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="resdta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_shared(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--folds", default="all", help="'all' or comma-separated fold ids in 0..4")
        p.add_argument("--limit", type=int, default=None, help="record cap for smoke tests")
        p.add_argument("--force", action="store_true", help="redo work even if cached")

    p = sub.add_parser("prepare", help="encode the raw dataset and build folds")
    add_shared(p)
    p.add_argument("--drugs", help="drug id -> SMILES file (TSV or JSON)")
    p.add_argument("--proteins", help="protein id -> sequence file (TSV or JSON)")
    p.add_argument("--affinities", help="affinity matrix file")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model per selected CV fold")
    add_shared(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--accumulation-steps", dest="accumulation_steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the held-out test part")
    add_shared(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint path (repeatable; default: all trained folds)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict affinities for listed (drug, protein) pairs")
    add_shared(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint path (default: fold0)")
    p.add_argument("--pairs", required=True, help="TSV of drug_id<TAB>protein_id")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="scatter data, regression line, and metric table")
    add_shared(p)
    p.add_argument("--predictions", help="predictions CSV (default: <out>/predictions.csv)")
    p.add_argument("--plot", action="store_true", help="also render scatter.png")
    p.set_defaults(func=cmd_report)

    return parser


DATA_ERRORS = (
    ds.ParseError,
    ds.DimensionMismatchError,
    ds.FoldIndexError,
    ds.OverlappingFoldsError,
    ds.IncompletePartitionError,
    vc.UnknownSymbolError,
    mdl.CheckpointError,
    mdl.TokenOutOfRangeError,
    mt.DegenerateInputError,
    mt.NoComparablePairsError,
    FileNotFoundError,
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _log(str(exc))
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        _log(str(exc))
        return 1
    except DATA_ERRORS as exc:
        _log(f"data error: {exc}")
        return 2
    except (tr.NonFiniteLossError, FloatingPointError) as exc:
        _log(f"runtime error: {exc}")
        return 3
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
