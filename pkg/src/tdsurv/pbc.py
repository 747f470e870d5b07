"""Primary biliary cirrhosis follow-up data (the ``pbc2`` table exported
from the R package joineRML) and its cross-validated landmark protocol.

Expected columns, one row per visit: ``id, years, status, drug, age, sex,
year, ascites, hepatomegaly, spiders, edema, serBilir, serChol, albumin,
alkaline, SGOT, platelets, prothrombin, histologic, status2``.  Extra
columns (such as the row names written by ``write.csv``) are ignored.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .coxloss import TrainConfig
from .data import Dataset, Subject, ValidationError
from .nn import NetworkSpec
from .pipeline import MetricRow, evaluate, subject_folds, train_model

log = logging.getLogger(__name__)

BASELINE = ("drug", "age", "sex")
CONTINUOUS = ("serBilir", "serChol", "albumin", "alkaline", "SGOT", "platelets", "prothrombin")
CATEGORICAL = ("ascites", "hepatomegaly", "spiders", "edema", "histologic")
LOG_SCALE = ("serBilir", "serChol", "alkaline", "SGOT")
LANDMARKS = (4.0, 7.0, 10.0)
WINDOW_MONTHS = (2, 4, 6, 8)

_CODES = {
    "drug": {"placebo": 0.0, "d-penicil": 1.0},
    "sex": {"male": 0.0, "female": 1.0},
    "ascites": {"no": 0.0, "yes": 1.0},
    "hepatomegaly": {"no": 0.0, "yes": 1.0},
    "spiders": {"no": 0.0, "yes": 1.0},
    "edema": {"no edema": 0.0, "edema no diuretics": 0.5, "edema despite diuretics": 1.0},
}
_MISSING = {"", "na", "nan"}


def _value(col: str, raw: str, lineno: int, path) -> float:
    raw = raw.strip().strip('"')
    if raw.lower() in _MISSING:
        return np.nan
    codes = _CODES.get(col)
    if codes is not None and raw.lower() in codes:
        return codes[raw.lower()]
    try:
        v = float(raw)
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: cannot read {col}={raw!r}") from None
    if col in LOG_SCALE:
        if v <= 0:
            raise ValidationError(f"{path}:{lineno}: {col} must be positive for the log scale, got {v}")
        v = float(np.log(v))
    return v


def load_pbc2(path) -> Dataset:
    """Subjects with baseline ``(drug, age, sex)`` and 12 longitudinal markers.

    The event is death (``status2``); transplanted and alive subjects are
    censored.  Missing marker values are carried forward within a subject
    and otherwise filled with the median over all visits.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().strip('"') for h in next(reader)]
        need = ("id", "years", "year", "status2") + BASELINE + CONTINUOUS + CATEGORICAL
        missing = [c for c in need if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in need}
        visits: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            sid = row[pos["id"]].strip().strip('"')
            rec = {c: _value(c, row[pos[c]], lineno, path) for c in need if c != "id"}
            visits.setdefault(sid, []).append((lineno, rec))

    markers = CONTINUOUS + CATEGORICAL
    all_marks = np.array([[r[c] for c in markers] for rows in visits.values() for _, r in rows])
    medians = np.nanmedian(all_marks, axis=0)
    base_all = np.array([[rows[0][1][c] for c in BASELINE] for rows in visits.values()])
    base_medians = np.nanmedian(base_all, axis=0)

    subjects = []
    for sid, rows in visits.items():
        first = rows[0][1]
        for lineno, r in rows[1:]:
            if (r["years"], r["status2"]) != (first["years"], first["status2"]):
                raise ValidationError(f"{path}:{lineno}: outcome of subject {sid} differs between visits")
        rows = sorted(rows, key=lambda lr: lr[1]["year"])
        history, last = [], np.full(len(markers), np.nan)
        for lineno, r in rows:
            y = np.array([r[c] for c in markers])
            y = np.where(np.isnan(y), last, y)
            last = y
            if np.isnan(r["year"]):
                raise ValidationError(f"{path}:{lineno}: visit time is missing")
            history.append((r["year"], tuple(np.where(np.isnan(y), medians, y))))
        base = np.array([first[c] for c in BASELINE])
        base = np.where(np.isnan(base), base_medians, base)
        if np.isnan(first["years"]) or np.isnan(first["status2"]):
            raise ValidationError(f"{path}: subject {sid} has no outcome")
        subjects.append(Subject.create(sid, tuple(base), history, first["years"], int(first["status2"])))
    subjects.sort(key=lambda s: (len(s.id), s.id))
    return Dataset(tuple(subjects), len(BASELINE), len(markers))


@dataclass(frozen=True)
class ProtocolResult:
    """Window-averaged metrics per landmark, averaged over folds and seeds."""

    landmarks: tuple[float, ...]
    brier: tuple[float, ...]
    cindex: tuple[float, ...]
    rows: tuple[tuple, ...]  # (seed, fold, s, dt, metric, value, n_eval, n_excluded)


def run_protocol(dataset: Dataset, seeds: Sequence[int] = (0, 1, 2, 3, 4), folds: int = 5,
                 landmarks: Sequence[float] = LANDMARKS, window_months: Sequence[float] = WINDOW_MONTHS,
                 model: str = "tdcoxsnn", spec: NetworkSpec | None = None,
                 config: TrainConfig = TrainConfig()) -> ProtocolResult:
    """Subject-level ``folds``-fold cross-validation repeated over ``seeds``.

    For each test fold the dynamic Brier score and the landmark c-index are
    computed at windows of ``window_months`` after each landmark (in years:
    ``months / 12``) and averaged over windows, then over folds and seeds.
    """
    horizons = [m / 12.0 for m in window_months]
    rows = []
    for seed in seeds:
        cfg = TrainConfig(config.batch_size, config.epochs, config.lr, seed, config.standardize)
        for f, test_ids in enumerate(subject_folds([s.id for s in dataset.subjects], folds, seed)):
            test_set = set(test_ids)
            train = dataset.subset(s.id for s in dataset.subjects if s.id not in test_set)
            test = dataset.subset(test_ids)
            net = None if spec is None else NetworkSpec(train.p + train.q, spec.hidden_nodes,
                                                        spec.dropout_rate, spec.bn_momentum, seed)
            trained = train_model(train, model, net, cfg)
            for r in evaluate(trained, test, landmarks, horizons, ("BS", "cindex")):
                rows.append((seed, f) + r.astuple())
    return ProtocolResult(tuple(float(s) for s in landmarks), *_landmark_means(rows, landmarks), tuple(rows))


def _landmark_means(rows, landmarks):
    out = {"BS": [], "cindex": []}
    for metric in out:
        for s in landmarks:
            vals = np.array([r[5] for r in rows if r[4] == metric and r[2] == s], dtype=float)
            vals = vals[np.isfinite(vals)]
            out[metric].append(float(vals.mean()) if len(vals) else float("nan"))
    return tuple(out["BS"]), tuple(out["cindex"])


def fold_rows(result: ProtocolResult) -> list[MetricRow]:
    return [MetricRow(*r[2:]) for r in result.rows]
