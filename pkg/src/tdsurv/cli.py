"""Command line: simulate, train, predict, evaluate, replicate and cv.

Every command writes its artifacts under ``--out`` and prints a JSON
summary on stdout.  Errors print ``{"error": ..., "message": ...}`` on
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baseline import predict_subject, write_baseline, write_predictions
from .coxloss import TrainConfig, write_training_log
from .data import Dataset, load_csv, load_json, load_subject_csv, write_csv
from .metrics import write_metrics
from .nn import NetworkSpec
from .pbc import load_pbc2
from .pipeline import (MODELS, MetricRow, TrainedModel, evaluate, run_parallel, subject_folds, summarize,
                       train_model, worker_count)
from .simulate import SimScenario, calibrate_intercept, gen_dataset

log = logging.getLogger("tdsurv")

DEFAULT_LANDMARKS = "1,3"
DEFAULT_HORIZONS = "1,2,3,4"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_training(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=_positive_int, default=20)
    g.add_argument("--batch-size", type=_positive_int, default=50, help="records per mini-batch")
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--hidden", type=_positive_int, default=30, help="hidden nodes")
    g.add_argument("--dropout", type=float, default=0.2)


def _add_grid(p, landmarks=DEFAULT_LANDMARKS, horizons=DEFAULT_HORIZONS):
    p.add_argument("--landmarks", type=_floats, default=_floats(landmarks), help="comma-separated s values")
    p.add_argument("--horizons", type=_floats, default=_floats(horizons), help="comma-separated dt values")


def _add_scenario(p):
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), default=1)
    p.add_argument("--censoring", type=float, choices=(0.4, 0.8), default=0.4)
    p.add_argument("--n-train", type=_positive_int, default=500)
    p.add_argument("--n-test", type=_positive_int, default=200)
    p.add_argument("--n-pilot", type=_positive_int, default=10_000, help="pilot size for intercept calibration")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tdsurv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate training and test data")
    _add_scenario(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="fit a model on long-format data")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", choices=MODELS, default="tdcoxsnn")
    p.add_argument("--seed", type=int, default=0)
    _add_training(p)
    p.add_argument("--out", type=Path, required=True)

    for name, help_ in (("predict", "conditional survival curves at landmarks"),
                        ("evaluate", "Brier score and cdAUC over a landmark/horizon grid")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model-file", type=Path, required=True)
        p.add_argument("--data", type=Path, required=True)
        _add_grid(p)
        p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("replicate", help="repeat simulate/train/evaluate cycles")
    _add_scenario(p)
    p.add_argument("--runs", type=_positive_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=MODELS, nargs="+", default=list(MODELS))
    _add_training(p)
    _add_grid(p, landmarks="1")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("cv", help="subject-level k-fold cross-validation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--format", choices=("long", "subject", "json", "pbc2"), default=None,
                   help="input format (default: from the file extension, else long)")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--runs", type=_positive_int, default=1, help="repeats with seeds seed, seed+1, ...")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=MODELS, nargs="+", default=["tdcoxsnn"])
    _add_training(p)
    _add_grid(p, landmarks="4,7,10", horizons="0.1666666667,0.3333333333,0.5,0.6666666667")
    p.add_argument("--out", type=Path, required=True)
    return ap


# ---------------------------------------------------------------------------

def read_dataset(path: Path, fmt: str | None = None) -> Dataset:
    fmt = fmt or ("json" if path.suffix == ".json" else "long")
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return {"long": load_csv, "subject": load_subject_csv, "json": load_json, "pbc2": load_pbc2}[fmt](path)


def _configs(args, seed: int, input_dim: int):
    spec = NetworkSpec(input_dim=input_dim, hidden_nodes=args.hidden, dropout_rate=args.dropout, seed=seed)
    return spec, TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, seed=seed)


def _scenario(args, seed: int) -> tuple[SimScenario, float]:
    sc = SimScenario(setting=args.scenario, target_censoring=args.censoring, seed=seed)
    c = calibrate_intercept(sc, args.censoring, args.n_pilot, np.random.default_rng([seed, 0]))
    return SimScenario(setting=args.scenario, target_censoring=args.censoring, c=c, seed=seed), c


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _write_summary(rows: list[dict], path: Path) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_simulate(args) -> dict:
    sc, c = _scenario(args, args.seed)
    rng = np.random.default_rng([args.seed, 1])
    train = gen_dataset(sc, args.n_train, rng).dataset
    test = gen_dataset(sc, args.n_test, rng).dataset
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(train, args.out / "train.csv")
    write_csv(test, args.out / "test.csv")
    manifest = {
        "scenario": args.scenario, "seed": args.seed, "target_censoring": args.censoring,
        "intercept": c, "n_pilot": args.n_pilot, "n_train": args.n_train, "n_test": args.n_test,
        "censoring_train": train.censoring_fraction, "censoring_test": test.censoring_fraction,
        "files": ["train.csv", "test.csv"],
    }
    _write_json(args.out / "manifest.json", manifest)
    return manifest


def cmd_train(args) -> dict:
    data = read_dataset(args.data)
    spec, cfg = _configs(args, args.seed, data.p + data.q)
    trained = train_model(data, args.model, spec, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "model.json", trained.to_json())
    write_baseline(trained.baseline, args.out / "baseline.csv")
    out = {"model": args.model, "n_subjects": len(data), "n_records": len(data.table)}
    if args.model == "tdcoxsnn":
        write_training_log(trained.model, args.out / "training_log.csv")
        out["final_loss"] = float(trained.model.losses[-1])
    else:
        out.update(coefficients=trained.model.coef.tolist(), converged=trained.model.converged)
    return out


def _load_model(path: Path) -> TrainedModel:
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return TrainedModel.from_json(json.loads(path.read_text()))


def cmd_predict(args) -> dict:
    trained = _load_model(args.model_file)
    data = read_dataset(args.data)
    curves = []
    for s in args.landmarks:
        u = [s + dt for dt in args.horizons]
        for subj in data.subjects:
            if subj.obs_time > s:
                curves.append(predict_subject(trained, trained.baseline, subj, s, u))
    args.out.mkdir(parents=True, exist_ok=True)
    write_predictions(curves, args.out / "predictions.csv")
    return {"curves": len(curves), "file": "predictions.csv"}


def cmd_evaluate(args) -> dict:
    trained = _load_model(args.model_file)
    data = read_dataset(args.data)
    rows = evaluate(trained, data, args.landmarks, args.horizons)
    args.out.mkdir(parents=True, exist_ok=True)
    write_metrics([r.astuple() for r in rows], args.out / "metrics.csv")
    return {"rows": len(rows), "file": "metrics.csv", "model": trained.kind}


def _replicate_task(task):
    args, sc, r = task
    rng = np.random.default_rng([args.seed, 2, r])
    train = gen_dataset(sc, args.n_train, rng).dataset
    test = gen_dataset(sc, args.n_test, rng).dataset
    run_seed = int(rng.integers(2 ** 31))
    out = []
    for kind in args.model:
        spec, cfg = _configs(args, run_seed, train.p + train.q)
        trained = train_model(train, kind, spec, cfg)
        out += [(r, kind) + row.astuple() for row in evaluate(trained, test, args.landmarks, args.horizons)]
    return out


def cmd_replicate(args) -> dict:
    sc, c = _scenario(args, args.seed)
    tasks = [(args, sc, r) for r in range(args.runs)]
    per_run = [row for rows in run_parallel(_replicate_task, tasks, worker_count()) for row in rows]
    args.out.mkdir(parents=True, exist_ok=True)
    header = ["run", "model", "s", "dt", "metric", "value", "n_eval", "n_excluded"]
    with (args.out / "runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(per_run)
    summary = _summary_by_model(per_run)
    _write_summary(summary, args.out / "summary.csv")
    _write_json(args.out / "manifest.json", {"scenario": args.scenario, "target_censoring": args.censoring,
                                             "intercept": c, "runs": args.runs, "seed": args.seed})
    return {"runs": args.runs, "cells": len(summary), "files": ["runs.csv", "summary.csv", "manifest.json"]}


def _summary_by_model(rows) -> list[dict]:
    out = []
    for kind in dict.fromkeys(r[1] for r in rows):
        mine = [MetricRow(*r[2:]) for r in rows if r[1] == kind]
        out += [{"model": kind, **s} for s in summarize(mine)]
    return out


def _cv_task(task):
    args, data, seed, fold, test_ids = task
    test_set = set(test_ids)
    train = data.subset(s.id for s in data.subjects if s.id not in test_set)
    test = data.subset(test_ids)
    out = []
    for kind in args.model:
        spec, cfg = _configs(args, seed, data.p + data.q)
        trained = train_model(train, kind, spec, cfg)
        rows = evaluate(trained, test, args.landmarks, args.horizons, ("BS", "cdAUC", "cindex"))
        out += [(seed, fold, kind) + r.astuple() for r in rows]
    return out


def cmd_cv(args) -> dict:
    data = read_dataset(args.data, args.format)
    tasks = []
    for seed in range(args.seed, args.seed + args.runs):
        for f, ids in enumerate(subject_folds([s.id for s in data.subjects], args.folds, seed)):
            tasks.append((args, data, seed, f, ids))
    rows = [row for rs in run_parallel(_cv_task, tasks, worker_count()) for row in rs]
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "folds.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "fold", "model", "s", "dt", "metric", "value", "n_eval", "n_excluded"])
        w.writerows(rows)
    summary = _summary_by_model([r[1:] for r in rows])
    _write_summary(summary, args.out / "summary.csv")
    return {"subjects": len(data), "folds": args.folds, "runs": args.runs, "files": ["folds.csv", "summary.csv"]}


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "replicate": cmd_replicate, "cv": cmd_cv}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except Exception as exc:  # every module error becomes a JSON report
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
