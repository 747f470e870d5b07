"""Linear time-dependent Cox model fitted by Newton-Raphson on the Efron
partial likelihood.  Serves as the comparator model and as a convex oracle
for the network loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineHazard, PredictionCurve, breslow, predict_survival
from .coxloss import RiskSetIndex, build_risk_sets, efron_loss
from .data import LongTable

log = logging.getLogger(__name__)

MAX_ITER = 50
SCORE_TOL = 1e-9
DIVERGENCE_NORM = 50.0


class CollinearityError(ValueError):
    pass


@dataclass
class CoxFit:
    coef: np.ndarray
    loss: float  # negative mean log partial likelihood at coef
    converged: bool
    iterations: int
    information: np.ndarray  # observed information of the summed log-likelihood
    score_vector: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def score(self, X) -> np.ndarray:
        """Linear predictor for each covariate row."""
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.coef

    @property
    def standard_errors(self) -> np.ndarray:
        se = np.full(len(self.coef), np.nan)
        ok = np.diag(self.information) > 0
        if ok.any():
            cov = np.linalg.pinv(self.information[np.ix_(ok, ok)])
            se[ok] = np.sqrt(np.clip(np.diag(cov), 0, None))
        return se

    def to_json(self) -> dict:
        return {
            "format": "tdsurv.coxph",
            "version": 1,
            "coefficients": self.coef.tolist(),
            "standard_errors": [None if not np.isfinite(v) else float(v) for v in self.standard_errors],
            "loss": self.loss,
            "converged": self.converged,
            "iterations": self.iterations,
            "max_abs_score": float(np.max(np.abs(self.score_vector))) if len(self.score_vector) else 0.0,
            "warnings": self.warnings,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CoxFit":
        coef = np.asarray(doc["coefficients"], dtype=float)
        se = np.array([np.nan if v is None else v for v in doc["standard_errors"]], dtype=float)
        info = np.diag(np.where(np.isfinite(se) & (se > 0), 1.0 / np.where(se > 0, se, 1.0) ** 2, 0.0))
        return cls(coef, doc["loss"], doc["converged"], doc["iterations"], info,
                   np.zeros(len(coef)), list(doc.get("warnings", [])))


def _efron_derivatives(X: np.ndarray, beta: np.ndarray, index: RiskSetIndex):
    """Summed Efron log-likelihood, its gradient and the observed information."""
    eta = X @ beta
    eta = eta - eta.max()
    w = np.exp(eta)
    k_times, p = len(index.times), X.shape[1]
    ll = 0.0
    grad = np.zeros(p)
    info = np.zeros((p, p))
    for k in range(k_times):
        risk = index.at_risk[k]
        tied = index.tied[k]
        d = int(tied.sum())
        wr, Xr = w[risk], X[risk]
        wt, Xt = w[tied], X[tied]
        s0r, s1r = wr.sum(), wr @ Xr
        s2r = (Xr * wr[:, None]).T @ Xr
        s0t, s1t = wt.sum(), wt @ Xt
        s2t = (Xt * wt[:, None]).T @ Xt
        ll += eta[tied].sum()
        grad += Xt.sum(axis=0)
        for r in range(d):
            f = r / d
            s0 = s0r - f * s0t
            s1 = s1r - f * s1t
            s2 = s2r - f * s2t
            ll -= np.log(s0)
            m = s1 / s0
            grad -= m
            info += s2 / s0 - np.outer(m, m)
    return ll, grad, info


def loglik_at(table: LongTable, beta) -> float:
    """Negative mean Efron log partial likelihood of linear scores ``X @ beta``."""
    index = build_risk_sets(table.tstart, table.tstop, table.event, table.ids)
    return efron_loss(table.X @ np.asarray(beta, dtype=float), index)


def fit_coxph(table: LongTable, max_iter: int = MAX_ITER, tol: float = SCORE_TOL) -> CoxFit:
    """Maximum partial likelihood by Newton-Raphson from beta = 0 with step halving.

    Covariates are centred and scaled internally; the partial likelihood is
    invariant to translation, and scaling is undone on the coefficients.
    """
    index = build_risk_sets(table.tstart, table.tstop, table.event, table.ids)
    X = np.asarray(table.X, dtype=float)
    p = X.shape[1]
    mean, sd = X.mean(axis=0), X.std(axis=0)
    varying = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
    warnings = []
    if not varying.all():
        msg = f"covariate(s) {np.flatnonzero(~varying).tolist()} are constant and not identifiable; coefficient fixed at 0"
        log.warning(msg)
        warnings.append(msg)
    Z = (X[:, varying] - mean[varying]) / sd[varying]
    n = index.n_subjects

    b = np.zeros(Z.shape[1])
    converged = Z.shape[1] == 0
    it = 0
    ll, grad, info = _efron_derivatives(Z, b, index) if Z.shape[1] else (0.0, np.zeros(0), np.zeros((0, 0)))
    if Z.shape[1]:
        ev = np.linalg.eigvalsh(info)
        if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
            raise CollinearityError("design is collinear: information matrix at beta=0 is singular")
        info0_min = ev[0]
    while not converged and it < max_iter:
        if np.max(np.abs(grad / sd[varying])) < tol:
            converged = True
            break
        it += 1
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        trial = b + step
        ll_new, g_new, i_new = _efron_derivatives(Z, trial, index)
        halvings = 0
        while (not np.isfinite(ll_new) or ll_new < ll - 1e-12 * abs(ll)) and halvings < 30:
            step /= 2
            trial = b + step
            ll_new, g_new, i_new = _efron_derivatives(Z, trial, index)
            halvings += 1
        b, ll, grad, info = trial, ll_new, g_new, i_new
        if np.linalg.norm(b / sd[varying]) > DIVERGENCE_NORM:
            msg = "coefficients diverging (monotone likelihood); fit not converged"
            log.warning(msg)
            warnings.append(msg)
            break
    else:
        if Z.shape[1] and np.max(np.abs(grad / sd[varying])) < tol:
            converged = True

    # under separation the score vanishes like exp(-|beta|) and can pass the
    # tolerance long before |beta| reaches the divergence guard
    if converged and Z.shape[1] and np.linalg.eigvalsh(info)[0] < 1e-8 * info0_min:
        converged = False
        msg = "information matrix collapsed (monotone likelihood); coefficients may be infinite"
        log.warning(msg)
        warnings.append(msg)

    coef = np.zeros(p)
    coef[varying] = b / sd[varying]
    full_grad = np.zeros(p)
    full_grad[varying] = grad / sd[varying]
    full_info = np.zeros((p, p))
    scale = 1.0 / sd[varying]
    full_info[np.ix_(varying, varying)] = info * np.outer(scale, scale)
    if not converged and not warnings:
        warnings.append(f"no convergence within {max_iter} iterations")
    return CoxFit(coef, float(-ll / n), bool(converged), it, full_info, full_grad, warnings)


def baseline_for(fit: CoxFit, table: LongTable) -> BaselineHazard:
    return breslow(table.tstart, table.tstop, table.event, fit.score(table.X))


def predict_coxph(fit: CoxFit, baseline: BaselineHazard, x, y_s, s: float, u, id: str = "") -> PredictionCurve:
    return predict_survival(fit, baseline, x, y_s, s, u, id)
