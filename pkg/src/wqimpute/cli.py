"""Command-line interface: train, evaluate, impute, gradcheck.

Exit codes: 0 success, 1 operational failure (bad data, divergence, failed
gradient check), 2 command-line usage errors (argparse).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .checkpoint import Checkpoint, checkpoint_from_training, load_checkpoint, save_checkpoint
from .cp import CP_DEFAULT_L2, CP_DEFAULT_LR, cp_predict_batch, cp_train
from .data import SparseTensor, SplitSpec, ingest_csv, normalize, split_entries
from .errors import ConfigError, DataError, WqImputeError
from .metrics import EVAL_CSV_HEADER, score
from .training import TrainConfig, gradcheck, train_nlr

TRAIN_DEFAULTS = {
    "rank": 10,
    "window": 3,
    "channels": "16,8,4",
    "epochs": 1000,
    "tol": 1e-5,
    "batch_size": 128,
    "ratios": "1:2:7",
    "seed": 0,
    "nonneg": False,
}

# learning rate, penalty, and optimizer differ between the two model families
MODEL_DEFAULTS = {
    "cp": {"lr": CP_DEFAULT_LR, "l2": CP_DEFAULT_L2, "optimizer": "sgd"},
    "nlr-cnn": {"lr": 1e-3, "l2": 0.0, "optimizer": "adam"},
}

_CONFIG_CASTS = {
    "rank": int, "window": int, "channels": str, "lr": float, "epochs": int,
    "tol": float, "batch_size": int, "l2": float, "optimizer": str,
    "ratios": str, "seed": int, "nonneg": None,  # nonneg handled as a bool word
}


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"ratios must look like 1:2:7, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"ratios must be numeric, got {text!r}") from None


def parse_int_triple(text: str, what: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"{what} must be three comma-separated integers, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{what} must be integers, got {text!r}") from None


def _parse_bool_word(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key} expects a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (# comments allowed) into typed settings."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from None
    for line_no, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {line_no}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in _CONFIG_CASTS:
            raise ConfigError(
                f"{path}: line {line_no}: unknown setting {key!r}; valid settings: "
                + ", ".join(sorted(_CONFIG_CASTS)))
        if key == "nonneg":
            out[key] = _parse_bool_word(value, key)
        else:
            try:
                out[key] = _CONFIG_CASTS[key](value)
            except ValueError:
                raise ConfigError(
                    f"{path}: line {line_no}: bad value {value!r} for {key}") from None
    return out


def resolve_train_settings(args) -> dict:
    """Merge flag values over config-file values over built-in defaults."""
    file_vals = read_config_file(args.config) if args.config else {}
    defaults = dict(TRAIN_DEFAULTS)
    defaults.update(MODEL_DEFAULTS[args.model])
    settings = {}
    for key, fallback in defaults.items():
        cli_val = getattr(args, key)
        if cli_val is not None:
            settings[key] = cli_val
        elif key in file_vals:
            settings[key] = file_vals[key]
        else:
            settings[key] = fallback
    return settings


def build_train_config(model: str, settings: dict) -> TrainConfig:
    return TrainConfig(
        rank=settings["rank"],
        window=settings["window"],
        channels=parse_int_triple(settings["channels"], "channels"),
        learning_rate=settings["lr"],
        epochs=settings["epochs"],
        tolerance=settings["tol"],
        batch_size=settings["batch_size"],
        l2=settings["l2"],
        seed=settings["seed"],
        optimizer=settings["optimizer"],
        nonneg=settings["nonneg"],
    )


def _check_maps_match(ckpt: Checkpoint, tensor: SparseTensor) -> None:
    pairs = [
        ("stations", ckpt.station_ids, tensor.station_ids),
        ("parameters", ckpt.parameter_names, tensor.parameter_names),
        ("time slots", ckpt.time_stamps, tensor.time_stamps),
    ]
    for name, expected, got in pairs:
        if expected != got:
            raise DataError(
                f"dataset {name} do not match the checkpoint "
                f"(checkpoint has {len(expected)}, dataset has {len(got)})")


def _predict(ckpt: Checkpoint, model, ii, jj, kk):
    if ckpt.model_kind == "cp":
        return cp_predict_batch(model, ii, jj, kk)
    return model.predict_batch(ii, jj, kk)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    settings = resolve_train_settings(args)
    config = build_train_config(args.model, settings)
    tensor = ingest_csv(args.input)
    split_spec = SplitSpec(parse_ratios(settings["ratios"]), settings["seed"])
    split = split_entries(tensor, split_spec)
    norm, scaler = normalize(tensor, split)
    train_entries = norm.entries(split.train)
    val_entries = norm.entries(split.val)

    if args.model == "cp":
        model, trace = cp_train(train_entries, val_entries, tensor.dims, config)
    else:
        model, trace = train_nlr(train_entries, val_entries, tensor.dims, config)

    trace_path = args.trace if args.trace else f"{args.out}.trace.csv"
    trace.to_csv(trace_path)
    ckpt = checkpoint_from_training(args.model, model, norm, config,
                                    split_spec, scaler, trace)
    save_checkpoint(ckpt, args.out)

    preds = _predict(ckpt, model, val_entries.i, val_entries.j, val_entries.k)
    report = score(val_entries.x, preds, model_kind=args.model,
                   split_name="val", scale="normalized")
    print(f"trained {args.model} for {trace.epochs_run} epoch(s), "
          f"stop reason {trace.stop_reason}, best epoch {trace.best_epoch}")
    print(report.text_block())
    print(f"checkpoint written to {args.out}")
    print(f"trace written to {trace_path}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    tensor = ingest_csv(args.input)
    _check_maps_match(ckpt, tensor)
    split = split_entries(tensor, ckpt.split)
    positions = {"train": split.train, "val": split.val,
                 "test": split.test, "all": None}[args.split]
    raw_entries = tensor.entries(positions)
    norm = tensor.with_values(ckpt.scaler.transform(tensor.j, tensor.values))
    entries = norm.entries(positions)

    model = ckpt.build_model()
    preds = _predict(ckpt, model, entries.i, entries.j, entries.k)
    if args.raw_scale:
        report = score(raw_entries.x, ckpt.scaler.inverse(entries.j, preds),
                       model_kind=ckpt.model_kind, split_name=args.split, scale="raw")
    else:
        report = score(entries.x, preds, model_kind=ckpt.model_kind,
                       split_name=args.split, scale="normalized")
    print(report.text_block())
    if args.out:
        fresh = not os.path.exists(args.out)
        with open(args.out, "a") as fh:
            if fresh:
                fh.write(EVAL_CSV_HEADER + "\n")
            fh.write(report.csv_line() + "\n")
    return 0


def _read_queries(path, ckpt: Checkpoint, skip_unknown: bool):
    """Resolve query rows to index triples; unknown identifiers are errors."""
    station_index = {s: n for n, s in enumerate(ckpt.station_ids)}
    parameter_index = {p: n for n, p in enumerate(ckpt.parameter_names)}
    time_index = {t: n for n, t in enumerate(ckpt.time_stamps)}
    rows, problems = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty queries file")
        cols = [c.strip() for c in header[:3]]
        if cols != ["station_id", "parameter", "timestamp"]:
            raise DataError(
                f"{path}: queries must start with station_id,parameter,timestamp, "
                f"got {','.join(cols)}")
        for line_no, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                problems.append(f"line {line_no}: expected 3 columns, got {len(row)}")
                continue
            sid, pname, ts = row[0].strip(), row[1].strip(), row[2].strip()
            missing = None
            if sid not in station_index:
                missing = f"unknown station {sid!r}"
            elif pname not in parameter_index:
                missing = f"unknown parameter {pname!r}"
            elif ts not in time_index:
                missing = f"unknown timestamp {ts!r}"
            if missing:
                problems.append(f"line {line_no}: {missing}")
                continue
            rows.append((station_index[sid], parameter_index[pname], time_index[ts]))
    if problems and not skip_unknown:
        raise DataError("unresolvable queries:\n" + "\n".join(problems))
    return rows, problems


def cmd_impute(args) -> int:
    import numpy as np

    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    skipped = []
    if args.all_missing:
        if not args.input:
            raise ConfigError("--all-missing needs --input to know which cells are observed")
        tensor = ingest_csv(args.input)
        _check_maps_match(ckpt, tensor)
        cube = int(np.prod(ckpt.dims))
        mask = np.ones(cube, dtype=bool)
        mask[tensor.flat_indices()] = False
        flat = np.flatnonzero(mask)
        ii, jj, kk = np.unravel_index(flat, ckpt.dims)
    else:
        rows, skipped = _read_queries(args.queries, ckpt, args.skip_unknown)
        ii = np.array([r[0] for r in rows], dtype=np.intp)
        jj = np.array([r[1] for r in rows], dtype=np.intp)
        kk = np.array([r[2] for r in rows], dtype=np.intp)

    if len(ii):
        preds = _predict(ckpt, model, ii, jj, kk)
        values = ckpt.scaler.inverse(jj, preds)
    else:
        values = []
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "parameter", "timestamp", "value"])
        for i, j, k, v in zip(ii, jj, kk, values):
            writer.writerow([ckpt.station_ids[i], ckpt.parameter_names[j],
                             ckpt.time_stamps[k], repr(float(v))])
    for line in skipped:
        print(f"skipped {line}", file=sys.stderr)
    print(f"imputed {len(ii)} cell(s) to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(
        rank=args.rank, window=args.window,
        channels=parse_int_triple(args.channels, "channels"),
        dims=parse_int_triple(args.dims, "dims"),
        n_entries=args.entries, l2=args.l2, step=args.step,
        threshold=args.threshold, seed=args.seed, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wqimpute",
        description="Sparse water-quality tensor imputation (cp and nlr-cnn models)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    p_train.add_argument("--input", required=True, help="observations CSV")
    p_train.add_argument("--model", required=True, choices=["cp", "nlr-cnn"])
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--trace", default=None,
                         help="trace CSV path (default: <out>.trace.csv)")
    p_train.add_argument("--config", default=None,
                         help="key=value settings file (flags win over it)")
    p_train.add_argument("--rank", type=int, default=None)
    p_train.add_argument("--window", type=int, default=None)
    p_train.add_argument("--channels", default=None, help="e.g. 16,8,4")
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--tol", type=float, default=None)
    p_train.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p_train.add_argument("--l2", type=float, default=None)
    p_train.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p_train.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=None,
                         help="project cp factors onto [0, inf) after each step")
    p_train.add_argument("--ratios", default=None, help="train:val:test, e.g. 1:2:7")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--input", required=True)
    p_eval.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p_eval.add_argument("--raw-scale", action="store_true", dest="raw_scale",
                        help="report errors in original units instead of [0, 1]")
    p_eval.add_argument("--out", default=None, help="append a CSV result line here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_imp = sub.add_parser("impute", help="predict values for unobserved cells")
    p_imp.add_argument("--checkpoint", required=True)
    group = p_imp.add_mutually_exclusive_group(required=True)
    group.add_argument("--queries", help="CSV of station_id,parameter,timestamp rows")
    group.add_argument("--all-missing", action="store_true", dest="all_missing",
                       help="impute every cell absent from --input")
    p_imp.add_argument("--input", default=None, help="observations CSV (for --all-missing)")
    p_imp.add_argument("--skip-unknown", action="store_true", dest="skip_unknown",
                       help="drop unresolvable queries instead of failing")
    p_imp.add_argument("--out", required=True, help="predictions CSV path")
    p_imp.set_defaults(func=cmd_impute)

    p_gc = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    p_gc.add_argument("--rank", type=int, default=7)
    p_gc.add_argument("--window", type=int, default=2)
    p_gc.add_argument("--channels", default="2,2,2")
    p_gc.add_argument("--dims", default="5,4,9")
    p_gc.add_argument("--entries", type=int, default=5)
    p_gc.add_argument("--l2", type=float, default=0.0)
    p_gc.add_argument("--step", type=float, default=1e-5)
    p_gc.add_argument("--threshold", type=float, default=1e-4)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--corrupt", default=None,
                      help="deliberately break one gradient group (self-test)")
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WqImputeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
