"""Glue shared by the command line: fit either model, score landmark
predictions on a test set, split subjects into folds and summarize
replicates."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .baseline import BaselineHazard, breslow, landmark_scores, survival_from_score
from .coxloss import FittedModel, TrainConfig, fit
from .coxph import CoxFit, fit_coxph
from .data import Dataset
from .metrics import brier, cdauc, dynamic_cindex, ipcw_window, km_censoring
from .nn import NetworkSpec

log = logging.getLogger(__name__)

MODELS = ("tdcoxsnn", "tdcoxph")


@dataclass(frozen=True)
class MetricRow:
    s: float
    dt: float
    metric: str
    value: float
    n_eval: int
    n_excluded: int

    def astuple(self):
        return (self.s, self.dt, self.metric, self.value, self.n_eval, self.n_excluded)


@dataclass
class TrainedModel:
    """A fitted risk-score model with its Breslow baseline."""

    kind: str
    model: FittedModel | CoxFit
    baseline: BaselineHazard

    def score(self, X) -> np.ndarray:
        return self.model.score(X)

    def to_json(self) -> dict:
        return {"model": self.kind, "fit": self.model.to_json(), "baseline": self.baseline.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "TrainedModel":
        kind = doc.get("model")
        if kind == "tdcoxsnn":
            model = FittedModel.from_json(doc["fit"])
        elif kind == "tdcoxph":
            model = CoxFit.from_json(doc["fit"])
        else:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {MODELS}")
        return cls(kind, model, BaselineHazard.from_json(doc["baseline"]))


def train_model(train: Dataset, kind: str = "tdcoxsnn", spec: NetworkSpec | None = None,
                config: TrainConfig = TrainConfig()) -> TrainedModel:
    """Fit the network or the linear Cox model on every long record of ``train``."""
    table = train.table
    if kind == "tdcoxsnn":
        spec = spec or NetworkSpec(input_dim=table.X.shape[1], seed=config.seed)
        if spec.input_dim != table.X.shape[1]:
            spec = replace(spec, input_dim=table.X.shape[1])
        model = fit(table, spec, config)
    elif kind == "tdcoxph":
        model = fit_coxph(table)
        for w in model.warnings:
            log.warning("tdcoxph: %s", w)
    else:
        raise ValueError(f"unknown model {kind!r}; expected one of {MODELS}")
    base = breslow(table.tstart, table.tstop, table.event, model.score(table.X))
    return TrainedModel(kind, model, base)


def landmark_predictions(trained: TrainedModel, test: Dataset, s: float, horizons: Sequence[float]):
    """``(scores, probs)`` for every test subject; ``probs[:, j]`` is the
    predicted ``P(T > s + dt_j | T > s)``.  Subjects with ``T <= s`` carry
    NaN, which the metrics never read."""
    n = len(test)
    scores = np.full(n, np.nan)
    probs = np.full((n, len(horizons)), np.nan)
    alive = np.flatnonzero(test.time > s)
    if len(alive):
        subs = [test.subjects[i] for i in alive]
        scores[alive] = landmark_scores(trained, subs, s)
        u = s + np.asarray(horizons, dtype=float)
        for row, g in zip(alive, scores[alive]):
            probs[row] = survival_from_score(trained.baseline, g, s, u)
    return scores, probs


def evaluate(trained: TrainedModel, test: Dataset, landmarks: Iterable[float], horizons: Sequence[float],
             metrics: Sequence[str] = ("BS", "cdAUC")) -> list[MetricRow]:
    """Prospective accuracy on ``test`` for every (landmark, horizon) pair.

    The censoring distribution is the Kaplan-Meier estimate on the test set.
    ``metrics`` may contain ``BS``, ``cdAUC`` and ``cindex``; the c-index
    only counts events up to ``s + dt``.
    """
    unknown = set(metrics) - {"BS", "cdAUC", "cindex"}
    if unknown:
        raise ValueError(f"unknown metric(s) {sorted(unknown)}")
    horizons = [float(h) for h in horizons]
    if not horizons:
        raise ValueError("at least one horizon is required")
    time, event = test.time, test.event
    G = km_censoring(time, event)
    rows = []
    for s in landmarks:
        s = float(s)
        scores, probs = landmark_predictions(trained, test, s, horizons)
        for j, dt in enumerate(horizons):
            win = ipcw_window(s, dt, time, event, G)
            for m in metrics:
                if m == "BS":
                    v = brier(s, dt, probs[:, j], time, event, G)
                elif m == "cdAUC":
                    v = cdauc(s, dt, probs[:, j], time, event, G)
                else:
                    alive = time > s
                    v = dynamic_cindex(s, scores[alive], time[alive], event[alive], horizon=s + dt)
                rows.append(MetricRow(s, dt, m, v, win.n_eval, win.n_excluded))
    return rows


def subject_folds(ids: Sequence[str], k: int, seed: int) -> list[list[str]]:
    """Assign subjects to ``k`` folds: ids are ordered by a seeded hash and
    dealt round-robin, so every subject lands in exactly one fold."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} subjects cannot fill {k} folds")
    order = sorted(ids, key=lambda i: hashlib.sha256(f"{seed}:{i}".encode()).hexdigest())
    return [order[f::k] for f in range(k)]


def summarize(rows: Iterable[MetricRow], by=("s", "dt", "metric")) -> list[dict]:
    """Mean and sample sd of ``value`` per group, ignoring NaN entries."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, b) for b in by), []).append(r.value)
    out = []
    for key, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        v = v[np.isfinite(v)]
        out.append({**dict(zip(by, key)), "mean": float(v.mean()) if len(v) else float("nan"),
                    "sd": float(v.std(ddof=1)) if len(v) > 1 else float("nan"), "n": int(len(v))})
    return out


def worker_count(requested: int | None = None) -> int:
    """Worker cap from ``TDSURV_THREADS`` (default 1)."""
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get("TDSURV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TDSURV_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"TDSURV_THREADS must be a positive integer, got {raw!r}")
    return n


def run_parallel(func, tasks: Sequence, workers: int) -> list:
    """Map ``func`` over ``tasks`` in order, in worker processes when ``workers > 1``."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(func, tasks))
