"""Prospective accuracy over a window ``(s, s + dt]``: IPCW Brier score,
cumulative/dynamic AUC and a landmark concordance index."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CensoringKM:
    """Kaplan-Meier estimate of the censoring survivor function G."""

    times: np.ndarray
    surv: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        out = np.concatenate([[1.0], self.surv])[k]
        return out if out.ndim else float(out)

    def left(self, t):
        """Left limit G(t-)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left")
        out = np.concatenate([[1.0], self.surv])[k]
        return out if out.ndim else float(out)


def km_censoring(time, event) -> CensoringKM:
    """KM on ``(T, 1 - delta)``: censorings are the events of interest."""
    time = np.asarray(time, dtype=float)
    cens = 1 - np.asarray(event, dtype=int)
    jump_times = np.unique(time[cens == 1])
    if len(jump_times) == 0:
        return CensoringKM(np.zeros(0), np.zeros(0))
    at_risk = (time[None, :] >= jump_times[:, None]).sum(axis=1)
    n_cens = np.array([np.count_nonzero((time == t) & (cens == 1)) for t in jump_times])
    return CensoringKM(jump_times, np.cumprod(1.0 - n_cens / at_risk))


@dataclass(frozen=True)
class EvalWindow:
    """IPCW weights for one landmark/horizon pair.

    ``included`` marks subjects with ``T > s`` whose required G value is
    positive; ``weight`` is zero outside it.
    """

    s: float
    dt: float
    weight: np.ndarray
    at_risk: np.ndarray
    included: np.ndarray

    @property
    def n_eval(self) -> int:
        return int(self.included.sum())

    @property
    def n_excluded(self) -> int:
        return int((self.at_risk & ~self.included).sum())


def ipcw_window(s: float, dt: float, time, event, censoring: CensoringKM | None = None) -> EvalWindow:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    G = censoring if censoring is not None else km_censoring(time, event)
    at_risk = time > s
    horizon = s + dt
    g_s = G(s)
    survivor = time > horizon
    case = (time <= horizon) & (event == 1) & at_risk
    w = np.zeros(len(time))
    included = at_risk.copy()
    if g_s <= 0:
        included[:] = False
    else:
        g_h = G(horizon) / g_s
        g_t = G.left(time) / g_s
        if g_h > 0:
            w[survivor & at_risk] = 1.0 / g_h
        else:
            included &= ~survivor
        bad = case & (g_t <= 0)
        included &= ~bad
        ok = case & ~bad
        w[ok] = 1.0 / g_t[ok]
    w[~included] = 0.0
    n_excl = int((at_risk & ~included).sum())
    if n_excl:
        log.info("s=%g dt=%g: %d subject(s) excluded for zero censoring survival", s, dt, n_excl)
    return EvalWindow(s, dt, w, at_risk, included)


def brier(s: float, dt: float, pred, time, event, censoring: CensoringKM | None = None) -> float:
    """IPCW time-dependent Brier score.

    ``pred[i]`` is the predicted ``P(T_i > s + dt | T_i > s)``; entries for
    subjects with ``T_i <= s`` are ignored.
    """
    win = ipcw_window(s, dt, time, event, censoring)
    if win.n_eval == 0:
        return float("nan")
    inc = win.included
    pred = np.asarray(pred, dtype=float)
    status = (np.asarray(time, dtype=float) > s + dt).astype(float)
    return float(np.sum(win.weight[inc] * (status[inc] - pred[inc]) ** 2) / win.n_eval)


def cdauc(s: float, dt: float, pred, time, event, censoring: CensoringKM | None = None) -> float:
    """IPCW cumulative/dynamic AUC; a pair counts when the case's predicted
    survival is strictly below the control's.  NaN without comparable pairs."""
    win = ipcw_window(s, dt, time, event, censoring)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    pred = np.asarray(pred, dtype=float)
    case = win.included & (event == 1) & (time <= s + dt)
    ctrl = win.included & (time > s + dt)
    wc, wk = win.weight[case], win.weight[ctrl]
    den = wc.sum() * wk.sum()
    if not case.any() or not ctrl.any() or den <= 0:
        return float("nan")
    conc = pred[case][:, None] < pred[ctrl][None, :]
    return float(wc @ conc @ wk / den)


def dynamic_cindex(s: float, risk, time, event, horizon: float | None = None) -> float:
    """Harrell concordance among subjects with ``T > s``.

    Usable pairs have ``T_i < T_j`` with an event for ``i``; the pair is
    concordant when ``risk_i > risk_j`` and ties in risk score 0.5.  With
    ``horizon`` only events at or before it open a pair.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    risk = np.asarray(risk, dtype=float)
    keep = time > s
    t, e, r = time[keep], event[keep], risk[keep]
    first = e == 1
    if horizon is not None:
        first &= t <= horizon
    usable = first[:, None] & (t[:, None] < t[None, :])
    n = usable.sum()
    if n == 0:
        return float("nan")
    score = np.where(r[:, None] > r[None, :], 1.0, np.where(r[:, None] == r[None, :], 0.5, 0.0))
    return float((score * usable).sum() / n)


def write_metrics(rows, path) -> None:
    """Rows of ``(s, dt, metric, value, n_eval, n_excluded)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "dt", "metric", "value", "n_eval", "n_excluded"])
        for s, dt, metric, value, n_eval, n_excl in rows:
            w.writerow([repr(float(s)), repr(float(dt)), metric, "" if not np.isfinite(value) else repr(float(value)),
                        n_eval, n_excl])
