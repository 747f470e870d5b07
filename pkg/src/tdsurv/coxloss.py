"""Efron-tied negative log partial likelihood on counting-process records,
and the mini-batch training loop for the risk-score network."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LongTable
from .nn import (NetworkParams, NetworkSpec, OptimizerState, adam_step, backward, forward,
                 init_params, params_from_json, params_to_json)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiskSetIndex:
    """Risk sets at each distinct event time.

    ``at_risk[k, j]`` is true when record ``j`` satisfies
    ``tstart < times[k] <= tstop``; ``tied[k, j]`` marks the records with an
    event exactly at ``times[k]``.
    """

    times: np.ndarray
    at_risk: np.ndarray
    tied: np.ndarray
    n_subjects: int

    @property
    def n_records(self) -> int:
        return self.at_risk.shape[1]

    @property
    def tie_sizes(self) -> np.ndarray:
        return self.tied.sum(axis=1)

    @property
    def risk_sizes(self) -> np.ndarray:
        return self.at_risk.sum(axis=1)

    def tied_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.tied[k])

    def at_risk_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.at_risk[k])


def build_risk_sets(tstart, tstop, event, ids=None) -> RiskSetIndex:
    """Index risk sets with delayed entry.  ``ids`` fixes the subject count
    used for the 1/n normalization; without it every record is a subject."""
    tstart = np.asarray(tstart, dtype=float)
    tstop = np.asarray(tstop, dtype=float)
    event = np.asarray(event).astype(bool)
    if not event.any():
        raise ValueError("no events among the records; the partial likelihood is undefined")
    times = np.unique(tstop[event])
    at_risk = (tstart[None, :] < times[:, None]) & (times[:, None] <= tstop[None, :])
    tied = event[None, :] & (tstop[None, :] == times[:, None])
    n = len(np.unique(ids)) if ids is not None else len(tstop)
    return RiskSetIndex(times, at_risk, tied, n)


def risk_sets_for(table: LongTable) -> RiskSetIndex:
    return build_risk_sets(table.tstart, table.tstop, table.event, table.ids)


def _efron_terms(scores, index: RiskSetIndex):
    g = np.asarray(scores, dtype=float)
    if g.shape != (index.n_records,):
        raise ValueError(f"expected {index.n_records} scores, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("scores must be finite")
    d = index.tie_sizes
    if np.any(d == 0):
        raise RuntimeError("risk-set index has an event time without tied events")
    w = np.exp(g - g.max())
    s_risk = index.at_risk @ w
    s_tied = index.tied @ w
    # frac[k, r] = r / d_k for r < d_k; padded entries are masked out
    r = np.arange(d.max())
    valid = r[None, :] < d[:, None]
    frac = np.where(valid, r[None, :] / d[:, None], 0.0)
    denom = s_risk[:, None] - frac * s_tied[:, None]
    if np.any(denom[valid] <= 0) or not np.all(np.isfinite(denom)):
        raise FloatingPointError("risk-set sum underflowed or overflowed after centering")
    return g - g.max(), w, frac, valid, denom


def efron_loss(scores, index: RiskSetIndex) -> float:
    """Negative log partial likelihood with Efron's tie correction, divided
    by the number of subjects."""
    gc, _, _, valid, denom = _efron_terms(scores, index)
    event_part = index.tied @ gc
    log_part = np.where(valid, np.log(np.where(valid, denom, 1.0)), 0.0).sum(axis=1)
    return float(-(event_part - log_part).sum() / index.n_subjects)


def efron_loss_grad(scores, index: RiskSetIndex) -> np.ndarray:
    """Gradient of :func:`efron_loss` with respect to each record's score."""
    _, w, frac, valid, denom = _efron_terms(scores, index)
    inv = np.where(valid, 1.0 / np.where(valid, denom, 1.0), 0.0)
    # sum_r (a_kj - f_kr t_kj) / D_kr = a_kj * sum_r 1/D_kr - t_kj * sum_r f_kr / D_kr
    c_risk = inv.sum(axis=1)
    c_tied = (frac * inv).sum(axis=1)
    expected = w * (c_risk @ index.at_risk - c_tied @ index.tied)
    observed = index.tied.sum(axis=0)
    return -(observed - expected) / index.n_subjects


def efron_loss_and_grad(scores, index: RiskSetIndex):
    return efron_loss(scores, index), efron_loss_grad(scores, index)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 20
    lr: float = 0.01
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    seconds: float
    batches_used: int
    batches_skipped: int


@dataclass
class FittedModel:
    """Trained network plus the input standardization learned on training records."""

    spec: NetworkSpec
    params: NetworkParams
    input_mean: np.ndarray
    input_scale: np.ndarray
    log: list[EpochLog] = field(default_factory=list)

    def transform(self, X) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.input_mean) / self.input_scale

    def score(self, X) -> np.ndarray:
        """Eval-mode risk score for each covariate row."""
        return forward(self.params, self.transform(X), self.spec, "eval")[0]

    @property
    def losses(self) -> np.ndarray:
        return np.array([e.mean_loss for e in self.log])

    def to_json(self) -> dict:
        return params_to_json(self.spec, self.params, input_mean=self.input_mean.tolist(),
                              input_scale=self.input_scale.tolist(),
                              training_log=[vars(e) for e in self.log])

    @classmethod
    def from_json(cls, doc: dict) -> "FittedModel":
        spec, params = params_from_json(doc)
        return cls(spec, params, np.asarray(doc["input_mean"], dtype=float),
                   np.asarray(doc["input_scale"], dtype=float),
                   [EpochLog(**e) for e in doc.get("training_log", [])])


def _standardizer(X: np.ndarray, enabled: bool):
    if not enabled:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    return mean, np.where(sd > 0, sd, 1.0)


def fit(table: LongTable, spec: NetworkSpec | None = None, config: TrainConfig = TrainConfig()) -> FittedModel:
    """Train the risk-score network by mini-batch Adam on the Efron loss.

    Each epoch shuffles the long records, splits them into batches of
    ``config.batch_size`` records and recomputes risk sets within each batch.
    Batches without events (and a trailing batch of one record) are skipped.
    """
    if spec is None:
        spec = NetworkSpec(input_dim=table.X.shape[1], seed=config.seed)
    if not np.any(table.event):
        raise ValueError("training data contain no events")
    if config.batch_size > len(table):
        raise ValueError(f"batch_size {config.batch_size} exceeds the {len(table)} training records")
    params = init_params(spec, np.random.default_rng(spec.seed))
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(lr=config.lr)
    mean, scale = _standardizer(table.X, config.standardize)
    Xs = (table.X - mean) / scale
    n = len(table)
    history = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses, skipped = [], 0
        for start in range(0, n, config.batch_size):
            b = order[start:start + config.batch_size]
            if len(b) < 2 or not table.event[b].any():
                skipped += 1
                continue
            index = build_risk_sets(table.tstart[b], table.tstop[b], table.event[b], table.ids[b])
            scores, cache = forward(params, Xs[b], spec, "train", rng)
            loss, dscore = efron_loss_and_grad(scores, index)
            grads = backward(cache, dscore)
            params, state = adam_step(params, grads, state)
            losses.append(loss)
        if not losses:
            raise ValueError(f"every batch in epoch {epoch} was event-free; increase batch_size")
        if skipped:
            log.debug("epoch %d: skipped %d event-free batch(es)", epoch, skipped)
        history.append(EpochLog(epoch, float(np.mean(losses)), time.perf_counter() - t0, len(losses), skipped))
    return FittedModel(spec, params, mean, scale, history)


def write_training_log(model: FittedModel, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "seconds"])
        for e in model.log:
            w.writerow([e.epoch, repr(e.mean_loss), f"{e.seconds:.6f}"])


__all__ = [
    "RiskSetIndex", "build_risk_sets", "risk_sets_for", "efron_loss", "efron_loss_grad",
    "efron_loss_and_grad", "TrainConfig", "FittedModel", "EpochLog", "fit", "write_training_log",
]
