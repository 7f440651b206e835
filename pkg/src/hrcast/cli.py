"""Command-line entry point: ingest CSVs into window artifacts, train
models, evaluate prediction sources side by side, and print per-player
case views.

Command-line flags override the optional --config JSON file, which in
turn overrides built-in defaults. The output root falls back to the
HRCAST_OUT environment variable. Outputs land in subtrees (models/,
history/, reports/) with file names that embed the model or source label
and the split year plus a short hash of the effective configuration, so
runs with different settings never clobber each other and identical runs
reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import figures as F
from . import ingest as I
from . import metrics as X
from . import models as M
from . import report as R
from . import train as T

_TRAIN_KEYS = ("data", "model", "year", "retrain_prior", "seed", "epochs",
               "learning_rate", "batch_size", "checkpoint_every",
               "clip_norm", "init_model", "out")
_EVALUATE_KEYS = ("data", "model", "year", "external", "out")
_DEFAULT_OUT = "hrcast_out"


def _load_config_file(path):
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise ValueError(f"config file {path} must hold a key-value object")
    return payload


def _settings(args, allowed_keys):
    """Merge flag values over config-file values. Flags win; a flag left
    at None falls through to the file, then to the caller's default."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        unknown = sorted(set(file_values) - set(allowed_keys))
        if unknown:
            raise ValueError(f"config file {args.config}: unknown keys "
                             + ", ".join(unknown))

    def pick(key, default=None):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        if key in file_values:
            return file_values[key]
        return default

    return pick


def _output_root(pick):
    out = pick("out")
    if out is None:
        out = os.environ.get("HRCAST_OUT", _DEFAULT_OUT)
    return Path(out)


def _unique_label(label, taken, stem):
    if label not in taken:
        return label
    candidate = f"{label}_{stem}"
    counter = 2
    while candidate in taken:
        candidate = f"{label}_{stem}{counter}"
        counter += 1
    return candidate


def _stack_training_arrays(normalizer, train_samples):
    scaled = I.apply_normalizer(normalizer, train_samples)
    x = np.stack([s.x for s in scaled])
    y = np.array([s.y for s in scaled], dtype=np.float64)
    return x, y


def _load_model_with_normalizer(path):
    model = M.load(path)
    payload = model.extra.get("normalizer")
    if payload is None:
        raise ValueError(f"model file {path} carries no normalizer; "
                         "train it through this tool's train command")
    return model, I.Normalizer.from_dict(payload)


def cmd_ingest(args):
    seasons = I.parse_seasons(args.input)
    kept = I.filter_seasons(seasons)
    samples = I.build_windows(kept)
    I.save_windows(samples, args.out)
    print(f"parsed {len(seasons)} seasons, kept {len(kept)} after the "
          "low-activity filter")
    counts = Counter(s.target_year for s in samples)
    for year in sorted(counts):
        print(f"  target year {year}: {counts[year]} samples")
    print(f"wrote {len(samples)} window samples to {args.out}")
    return 0


def cmd_train(args):
    pick = _settings(args, _TRAIN_KEYS)
    data = pick("data")
    name = pick("model")
    year = pick("year")
    if data is None or name is None or year is None:
        raise ValueError("train needs --data, --model, --year "
                         "(flags or config file)")
    if name not in M.MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; valid names: "
                         + ", ".join(M.MODEL_NAMES))
    root = _output_root(pick)
    train_config = T.TrainConfig(
        epochs=int(pick("epochs", 1000)),
        learning_rate=float(pick("learning_rate", 1e-3)),
        batch_size=int(pick("batch_size", 32)),
        seed=int(pick("seed", 0)),
        checkpoint_every=int(pick("checkpoint_every", 0)),
        clip_norm=(None if pick("clip_norm") is None
                   else float(pick("clip_norm"))),
    )
    init_model = pick("init_model")
    effective = {
        "command": "train", "data": str(data), "model": name,
        "year": int(year), "retrain_prior": bool(pick("retrain_prior",
                                                      False)),
        "seed": train_config.seed, "epochs": train_config.epochs,
        "learning_rate": train_config.learning_rate,
        "batch_size": train_config.batch_size,
        "checkpoint_every": train_config.checkpoint_every,
        "clip_norm": train_config.clip_norm,
        "init_model": None if init_model is None else str(init_model),
        "out": str(root),
    }
    print("effective config: "
          + json.dumps(effective, sort_keys=True, separators=(",", ":")))

    samples = I.load_windows(data)
    split = I.split_by_target_year(samples, int(year),
                                   effective["retrain_prior"])
    print(f"split at {year}: {len(split.train)} train / "
          f"{len(split.test)} test samples")
    normalizer = I.fit_normalizer(split.train)
    x, y = _stack_training_arrays(normalizer, split.train)

    if init_model is None:
        model = M.build_model(M.builtin_spec(name), seed=train_config.seed)
    else:
        model = M.load(init_model)
        if model.spec.name != name:
            raise ValueError(
                f"warm-start file {init_model} holds a "
                f"{model.spec.name!r} model, not {name!r}")
    digest = R.config_hash(effective)
    stem = f"{name}_{year}_{digest}"
    models_dir = root / "models"
    history_dir = root / "history"
    models_dir.mkdir(parents=True, exist_ok=True)
    history_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = None
    if train_config.checkpoint_every > 0:
        checkpoint_dir = models_dir / f"checkpoints_{stem}"
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    history = T.train(model, x, y, train_config,
                      checkpoint_dir=checkpoint_dir)
    final = history.final_mse()
    model.extra = {
        "normalizer": normalizer.to_dict(),
        "target_year": int(year),
        "config": effective,
        "config_hash": digest,
        "final_train_mse": final,
    }
    model_path = models_dir / f"{stem}.hrm"
    M.save(model, model_path)
    history_path = history_dir / f"{stem}.csv"
    history.to_csv(history_path)
    sidecar = history_dir / f"{stem}.config.json"
    sidecar.write_text(json.dumps(
        {"config": effective, "config_hash": digest,
         "final_train_mse": final}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    curve_path = F.save_loss_curve(history, history_dir / f"{stem}.png")

    print(f"final training MSE after {train_config.epochs} epochs: "
          f"{final:.6f}")
    for path in (model_path, history_path, sidecar, curve_path):
        print(f"wrote {path}")
    return 0


def cmd_evaluate(args):
    pick = _settings(args, _EVALUATE_KEYS)
    data = pick("data")
    year = pick("year")
    model_paths = args.model or pick("model") or []
    if isinstance(model_paths, str):
        model_paths = [model_paths]
    external_paths = args.external or pick("external") or []
    if isinstance(external_paths, str):
        external_paths = [external_paths]
    if data is None or year is None or not model_paths:
        raise ValueError("evaluate needs --data and --year plus at least "
                         "one --model")
    root = _output_root(pick)
    effective = {
        "command": "evaluate", "data": str(data), "year": int(year),
        "models": [str(p) for p in model_paths],
        "external": [str(p) for p in external_paths], "out": str(root),
    }
    print("effective config: "
          + json.dumps(effective, sort_keys=True, separators=(",", ":")))

    samples = I.load_windows(data)
    split = I.split_by_target_year(samples, int(year))

    # Load every input before writing anything, so a bad path aborts
    # without leaving a partial bundle behind.
    loaded = [_load_model_with_normalizer(path) for path in model_paths]
    externals = [X.ingest_external_predictions(path)
                 for path in external_paths]

    results = []
    taken = set()
    for path, (model, normalizer) in zip(model_paths, loaded):
        label = _unique_label(model.spec.name, taken, Path(path).stem)
        taken.add(label)
        pred_set = X.model_predictions(model, split.test, normalizer,
                                       source=label)
        results.append(R.evaluate_source(pred_set))
    for path, external in zip(external_paths, externals):
        label = _unique_label(external.source, taken, Path(path).stem)
        taken.add(label)
        pred_set, unmatched = X.join_external(external, split.test)
        if unmatched:
            noun = "row" if unmatched == 1 else "rows"
            print(f"{label}: {unmatched} {noun} matched no test sample "
                  f"(evaluated n={len(pred_set)})")
        results.append(R.evaluate_source(pred_set, unmatched))

    reports_dir = root / "reports"
    written = R.write_report_files(reports_dir, results, int(year),
                                   effective)
    digest = R.config_hash(effective)
    written.append(F.save_error_chart(
        results, reports_dir / f"error_{year}_{digest}.png"))
    written.append(F.save_interval_chart(
        results, reports_dir / f"interval_{year}_{digest}.png"))

    print(R.render_comparison_table(results, int(year)))
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_predict(args):
    samples = I.load_windows(args.data)
    split = I.split_by_target_year(samples, int(args.year))
    model, normalizer = _load_model_with_normalizer(args.model)
    pred_set = X.model_predictions(model, split.test, normalizer)
    view = X.case_view([pred_set], split.test, args.player)
    print(R.render_case_view(view))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hrcast",
        description="Train and evaluate sequence models that project "
                    "next-season home-run totals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser(
        "ingest", help="parse a season CSV into a window-sample artifact")
    p_ingest.add_argument("--input", required=True,
                          help="player-season CSV file")
    p_ingest.add_argument("--out", required=True,
                          help="artifact file to write")
    p_ingest.set_defaults(func=cmd_ingest)

    p_train = sub.add_parser(
        "train", help="train a model on windows before a target year")
    p_train.add_argument("--data", help="window-sample artifact")
    p_train.add_argument("--model", help="architecture name, one of: "
                         + ", ".join(M.MODEL_NAMES))
    p_train.add_argument("--year", type=int,
                         help="target year; training uses earlier windows")
    p_train.add_argument("--retrain-prior", dest="retrain_prior",
                         action="store_true", default=None,
                         help="record that earlier test-year samples "
                              "re-enter training")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--learning-rate", dest="learning_rate",
                         type=float)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every",
                         type=int)
    p_train.add_argument("--clip-norm", dest="clip_norm", type=float)
    p_train.add_argument("--init-model", dest="init_model",
                         help="existing model file to warm-start from "
                              "instead of fresh seeded weights")
    p_train.add_argument("--config", help="JSON file with default settings")
    p_train.add_argument("--out", help="output root directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser(
        "evaluate", help="run the evaluation battery for one test year")
    p_eval.add_argument("--model", action="append",
                        help="trained model file (repeatable)")
    p_eval.add_argument("--data", help="window-sample artifact")
    p_eval.add_argument("--year", type=int, help="test target year")
    p_eval.add_argument("--external", action="append",
                        help="external prediction CSV (repeatable)")
    p_eval.add_argument("--config", help="JSON file with default settings")
    p_eval.add_argument("--out", help="output root directory")
    p_eval.set_defaults(func=cmd_evaluate)

    p_pred = sub.add_parser(
        "predict", help="print case views for individual players")
    p_pred.add_argument("--model", required=True, help="trained model file")
    p_pred.add_argument("--data", required=True,
                        help="window-sample artifact")
    p_pred.add_argument("--year", type=int, required=True,
                        help="test target year")
    p_pred.add_argument("--player", action="append", required=True,
                        help="player id (repeatable)")
    p_pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, T.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
