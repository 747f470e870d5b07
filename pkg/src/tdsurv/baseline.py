"""Breslow cumulative baseline hazard and conditional survival curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .coxloss import build_risk_sets
from .data import Subject, covariate_at


class Scorer(Protocol):
    def score(self, X) -> np.ndarray: ...


@dataclass(frozen=True)
class BaselineHazard:
    """Right-continuous step function; zero before the first event time and
    constant after the last one."""

    times: np.ndarray
    cumhaz: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")
        if np.any(self.cumhaz < 0) or np.any(np.diff(self.cumhaz) < 0):
            raise ValueError("cumulative hazard must be non-negative and non-decreasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[0.0], self.cumhaz])[k]
        return vals if vals.ndim else float(vals)

    def to_rows(self):
        return list(zip(self.times.tolist(), self.cumhaz.tolist()))

    def to_json(self) -> dict:
        return {"time": self.times.tolist(), "cumhaz": self.cumhaz.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "BaselineHazard":
        return cls(np.asarray(doc["time"], dtype=float), np.asarray(doc["cumhaz"], dtype=float))


def breslow(tstart, tstop, event, scores) -> BaselineHazard:
    """Breslow estimator: increment ``d(T) / sum_{at risk} exp(g)`` at each
    distinct event time, with at-risk meaning ``tstart < T <= tstop``."""
    idx = build_risk_sets(tstart, tstop, event)
    g = np.asarray(scores, dtype=float)
    if g.shape != (idx.n_records,):
        raise ValueError(f"expected {idx.n_records} scores, got shape {g.shape}")
    return BaselineHazard(idx.times, np.cumsum(idx.tie_sizes / (idx.at_risk @ np.exp(g))))


@dataclass(frozen=True)
class PredictionCurve:
    id: str
    s: float
    u: np.ndarray
    prob: np.ndarray

    def rows(self):
        return [(self.id, self.s, float(u), float(p)) for u, p in zip(self.u, self.prob)]


def survival_from_score(baseline: BaselineHazard, score: float, s: float, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u <= s):
        raise ValueError(f"every horizon must exceed the landmark s={s}")
    return np.exp(-(baseline(u) - baseline(s)) * np.exp(score))


def predict_survival(model: Scorer, baseline: BaselineHazard, x: Sequence[float], y_s: Sequence[float],
                     s: float, u, id: str = "") -> PredictionCurve:
    """Conditional survival ``P(T > u | T > s)`` from covariates in force at ``s``."""
    g = float(model.score(np.concatenate([np.asarray(x, dtype=float), np.asarray(y_s, dtype=float)])[None, :])[0])
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return PredictionCurve(str(id), float(s), u, survival_from_score(baseline, g, s, u))


def predict_subject(model: Scorer, baseline: BaselineHazard, subject: Subject, s: float, u) -> PredictionCurve:
    """Prediction at landmark ``s`` using the subject's latest measurement at or before ``s``."""
    return predict_survival(model, baseline, subject.baseline, covariate_at(subject, s), s, u, subject.id)


def update_prediction(model: Scorer, baseline: BaselineHazard, subject: Subject, s_new: float, u,
                      previous_s: float | None = None) -> PredictionCurve:
    """Refresh a subject's curve at a later landmark with the history up to ``s_new``."""
    if previous_s is not None and s_new < previous_s:
        raise ValueError(f"new landmark {s_new} precedes the previous landmark {previous_s}")
    return predict_subject(model, baseline, subject, s_new, u)


def landmark_scores(model: Scorer, subjects: Sequence[Subject], s: float) -> np.ndarray:
    """Risk score of each subject from its covariates in force at ``s``."""
    if not subjects:
        return np.zeros(0)
    X = np.array([s_.baseline + covariate_at(s_, s) for s_ in subjects], dtype=float)
    return np.asarray(model.score(X), dtype=float)


def write_predictions(curves: Sequence[PredictionCurve], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "s", "u", "prob"])
        for c in curves:
            for row in c.rows():
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def write_baseline(baseline: BaselineHazard, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "cumhaz"])
        for t, h in baseline.to_rows():
            w.writerow([repr(t), repr(h)])
