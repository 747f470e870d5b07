"""Simulation of longitudinal covariates and survival times under a
time-dependent Weibull proportional hazards model.

Each subject has four uniform baseline covariates and one biomarker
following a quadratic mixed-effects trajectory observed with noise at visits
t = 0, 1, ..., 14.  Event times solve ``H(T) = -log U`` where
``H(t) = lam * int_0^t rho u^(rho-1) exp(g(x, y*(u))) du`` uses the true
trajectory; the integral is computed by adaptive composite Simpson after a
power substitution that removes the ``u^(rho-1)`` singularity, and inverted
by bisection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import TIME_QUANTUM, Dataset, Measurement, Subject, quantize_time

log = logging.getLogger(__name__)

PANEL_WIDTH = 0.01
QUAD_RTOL = 1e-8
MAX_DEPTH = 30
LOG_HAZARD_CAP = 600.0
ROOT_TOL = 1e-8
CHUNK = 500


@dataclass(frozen=True)
class SimScenario:
    setting: int = 1
    beta0: float = 3.2
    beta1: float = -0.07
    beta2: float | None = None  # None: 0.004 for settings 2 and 4, else 0
    sigma: tuple[float, float, float] | None = None  # random-effect variances
    noise_sd: float = 0.3
    rho: float = 1.4
    lam: float = 0.1
    censor_rate: float = 1 / 7
    target_censoring: float = 0.4
    c: float = 0.0
    visits: tuple[float, ...] = tuple(float(t) for t in range(15))
    horizon: float = 15.0
    x_low: float = -0.5
    x_high: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.setting not in (1, 2, 3, 4):
            raise ValueError(f"setting must be 1-4, got {self.setting}")
        quad = self.setting in (2, 4)
        if self.beta2 is None:
            object.__setattr__(self, "beta2", 0.004 if quad else 0.0)
        if self.sigma is None:
            object.__setattr__(self, "sigma", (1.44, 0.6, 0.09 if quad else 0.0))
        if not 0 < self.target_censoring < 1:
            raise ValueError("target censoring fraction must lie in (0, 1)")

    @property
    def nonlinear_effect(self) -> bool:
        return self.setting in (3, 4)


def risk_score(setting: int, x, ystar, c: float = 0.0):
    """Log relative hazard ``g(x, y*)`` for the four settings (broadcasts)."""
    x = np.asarray(x, dtype=float)
    ystar = np.asarray(ystar, dtype=float)
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    # np.cbrt is the real (signed) cube root, so g stays real for negative radicands
    if setting in (1, 2):
        return x1 + 2 * x2 + 3 * x3 + 4 * x4 + 0.3 * ystar + c
    if setting in (3, 4):
        if np.any(x3 <= -1):
            raise ValueError("x3 must exceed -1 for log(x3 + 1)")
        inner = (x1 ** 2 * x2 ** 3 + np.log(x3 + 1) + np.cbrt(0.3 * ystar * x4 + 1)
                 + np.exp(x4 / 2) + 0.3 * ystar)
        return inner ** 2 / 3 + c
    raise ValueError(f"setting must be 1-4, got {setting}")


@dataclass(frozen=True)
class Trajectories:
    """True biomarker paths ``a0 + a1 t + a2 t^2``, one row per subject."""

    coef: np.ndarray  # (n, 3)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = self.coef
        if t.ndim == 0:
            return a[:, 0] + a[:, 1] * t + a[:, 2] * t * t
        return a[:, 0, None] + a[:, 1, None] * t + a[:, 2, None] * t * t

    def __len__(self):
        return len(self.coef)


def draw_trajectories(scenario: SimScenario, n: int, rng: np.random.Generator):
    """Random-effect trajectories and their noisy observations at every visit."""
    b = rng.normal(size=(n, 3)) * np.sqrt(np.asarray(scenario.sigma))
    coef = np.array([scenario.beta0, scenario.beta1, scenario.beta2]) + b
    traj = Trajectories(coef)
    visits = np.asarray(scenario.visits, dtype=float)
    observed = traj(visits) + rng.normal(0.0, scenario.noise_sd, size=(n, len(visits)))
    return traj, observed


def gen_trajectory(scenario: SimScenario, rng: np.random.Generator):
    """One subject: ``(true path y*(t), observed measurements on the visit grid)``."""
    traj, obs = draw_trajectories(scenario, 1, rng)
    a0, a1, a2 = traj.coef[0]

    def path(t):
        t = np.asarray(t, dtype=float)
        return a0 + a1 * t + a2 * t * t

    return path, [Measurement(float(t), (float(y),)) for t, y in zip(scenario.visits, obs[0])]


# ---------------------------------------------------------------------------
# cumulative hazard and its inversion

LogHazard = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class CumulativeHazard:
    """Cumulative hazard of ``n`` subjects on ``[0, upper]``.

    ``log_rel(rows, t)`` returns ``g`` for subject ``rows`` (shape ``(r,)``)
    at times ``t`` whose leading axis is either ``r`` or 1 (shared times);
    the result has the broadcast shape.

    Integration runs in ``w = t^(1/k)`` with ``k * rho - 1 >= 4`` so the
    transformed integrand ``lam rho k w^(k rho - 1) exp(g(w^k))`` is smooth
    at the origin.  Each panel of width ``h`` in ``t`` starts with a
    one-panel Simpson estimate; a panel is accepted when halving changes it
    by less than its length share of ``QUAD_RTOL * max(H_i(upper), 1)``,
    otherwise it is bisected adaptively (kinks of the cube root in settings
    3 and 4 only need local refinement).
    """

    log_rel: LogHazard
    n: int
    rho: float
    lam: float
    upper: float
    h: float = PANEL_WIDTH
    nodes: np.ndarray = field(init=False)
    grid: np.ndarray = field(init=False)
    power: int = field(init=False)
    max_depth_used: int = field(init=False, default=0)

    def __post_init__(self):
        if self.rho <= 0 or self.lam <= 0:
            raise ValueError("rho and lam must be positive")
        k = int(np.ceil(self.upper / self.h - 1e-9))
        self.nodes = np.linspace(0.0, k * self.h, k + 1)
        self.power = int(np.ceil(5.0 / self.rho))
        self._wspan = self.nodes[-1] ** (1.0 / self.power)
        self.grid = np.zeros((self.n, len(self.nodes)))
        for lo in range(0, self.n, CHUNK):
            rows = np.arange(lo, min(lo + CHUNK, self.n))
            self.grid[rows, 1:] = np.cumsum(self._panels(rows), axis=1)

    def _f(self, rows, w):
        """Transformed integrand at ``w`` (leading axis ``r`` or 1)."""
        k = self.power
        jac = self.lam * self.rho * k * w ** (k * self.rho - 1)
        # the cap only bites once H is astronomically past any -log U target
        return jac * np.exp(np.minimum(self.log_rel(rows, w ** k), LOG_HAZARD_CAP))

    def _panels(self, rows):
        wn = self.nodes ** (1.0 / self.power)
        wa, wb = wn[:-1], wn[1:]
        # shared abscissae at quarter points of every panel
        pts = wa[:, None] + (wb - wa)[:, None] * np.linspace(0.0, 1.0, 5)
        f = self._f(rows, pts[None])  # (r, panels, 5)
        d = (wb - wa)[None]
        coarse = d / 6 * (f[..., 0] + 4 * f[..., 2] + f[..., 4])
        fine = d / 12 * (f[..., 0] + 4 * f[..., 1] + 2 * f[..., 2] + 4 * f[..., 3] + f[..., 4])
        tol = self._tol(fine.sum(axis=1))[:, None] * d / self._wspan
        bad = np.abs(fine - coarse) >= tol
        if bad.any():
            r_i, p_i = np.nonzero(bad)
            fine[r_i, p_i] = self._adaptive(rows[r_i], wa[p_i], wb[p_i], coarse[r_i, p_i], tol[r_i, p_i])
        return fine

    @staticmethod
    def _tol(total):
        return QUAD_RTOL * np.maximum(total, 1.0)

    def _simpson(self, rows, wa, wb):
        wm = 0.5 * (wa + wb)
        f = self._f(rows, np.stack([wa, wm, wb], axis=-1))
        return (wb - wa) / 6 * (f[:, 0] + 4 * f[:, 1] + f[:, 2])

    def _adaptive(self, rows, wa, wb, whole, tol):
        """Vectorized adaptive Simpson on intervals ``[wa, wb]`` in ``w``.

        Tolerances split with the interval.  Near a cube-root kink the error
        shrinks more slowly than the length, so at ``MAX_DEPTH`` the interval is
        accepted and only a change above the caller's tolerance is reported.
        """
        owner = np.arange(len(rows))
        budget = tol.copy()
        out = np.zeros(len(rows))
        depth = 0
        worst = 0.0
        while len(owner):
            depth += 1
            wm = 0.5 * (wa + wb)
            left = self._simpson(rows, wa, wm)
            right = self._simpson(rows, wm, wb)
            fine = left + right
            change = np.abs(fine - whole)
            done = (change < tol) | ~np.isfinite(fine)
            if depth >= MAX_DEPTH:
                worst = max(worst, float(np.max(change[~done] / budget[owner[~done]], initial=0.0)))
                done[:] = True
            np.add.at(out, owner[done], fine[done])
            keep = ~done
            owner = np.concatenate([owner[keep]] * 2)
            rows = np.concatenate([rows[keep]] * 2)
            wa, wb = np.concatenate([wa[keep], wm[keep]]), np.concatenate([wm[keep], wb[keep]])
            whole = np.concatenate([left[keep], right[keep]])
            tol = np.concatenate([tol[keep] / 2] * 2)
        self.max_depth_used = max(self.max_depth_used, depth)
        if worst > 1:
            log.warning("adaptive quadrature stopped at depth %d with change %.1fx its tolerance", MAX_DEPTH, worst)
        return out

    def integral(self, rows, a, b) -> np.ndarray:
        """``int_a^b`` of the hazard for subject ``rows`` (same-shaped ``a``, ``b``)."""
        rows = np.asarray(rows)
        wa = np.asarray(a, dtype=float) ** (1.0 / self.power)
        wb = np.asarray(b, dtype=float) ** (1.0 / self.power)
        whole = self._simpson(rows, wa, wb)
        tol = self._tol(self.grid[rows, -1]) * (wb - wa) / self._wspan
        return self._adaptive(rows, wa, wb, whole, np.maximum(tol, 1e-300))

    def __call__(self, t) -> np.ndarray:
        """``H_i(t_i)`` for one time per subject."""
        t = np.asarray(t, dtype=float)
        if t.shape != (self.n,):
            raise ValueError("need exactly one time per subject")
        if np.any(t < 0) or np.any(t > self.nodes[-1] + 1e-12):
            raise ValueError("time outside the integration range")
        k = np.minimum(np.floor(t / self.h + 1e-12).astype(int), len(self.nodes) - 1)
        k = np.where(self.nodes[k] > t, k - 1, k)
        rows = np.arange(self.n)
        out = self.grid[rows, k].copy()
        part = t > self.nodes[k]
        if part.any():
            out[part] += self.integral(rows[part], self.nodes[k[part]], t[part])
        return out

    def invert(self, target) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``H_i(T_i) = target_i`` by bisection inside the bracketing
        panel.  Returns ``(T, capped)``; roots beyond ``upper`` give
        ``T = upper`` with ``capped`` set."""
        target = np.asarray(target, dtype=float)
        rows = np.arange(self.n)
        capped = target > self.grid[:, -1]
        # first node with H >= target brackets the root in (node[k-1], node[k]]
        k = np.array([np.searchsorted(self.grid[i], target[i], side="left") for i in rows], dtype=int)
        k = np.clip(k, 1, len(self.nodes) - 1)
        T = np.full(self.n, self.upper)
        todo = ~capped
        r = rows[todo]
        start = self.nodes[k[todo] - 1]
        lo, hi = start.copy(), self.nodes[k[todo]].copy()
        base, tgt = self.grid[r, k[todo] - 1], target[todo]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = base + self.integral(r, start, mid) < tgt
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1.0)):
                break
        T[todo] = 0.5 * (lo + hi)
        return T, capped


def _subject_log_hazard(scenario: SimScenario, X: np.ndarray, traj: Trajectories, c: float) -> LogHazard:
    def g(rows, t):
        extra = (None,) * (np.ndim(t) - 1)
        coef = traj.coef[rows]
        a0, a1, a2 = (coef[(slice(None), j) + extra] for j in range(3))
        x = X[rows][(slice(None),) + extra]
        return risk_score(scenario.setting, x, a0 + a1 * t + a2 * t * t, c)
    return g


def gen_survival_times(scenario: SimScenario, X, traj: Trajectories, rng: np.random.Generator,
                       log_hazard: LogHazard | None = None):
    """Event times for every subject.  Returns ``(T*, capped, H, U)`` where
    ``H`` is the cumulative hazard used for inversion and ``U`` the uniform
    draws, so that ``H(T*) = -log(U)`` for uncapped subjects."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    g = log_hazard or _subject_log_hazard(scenario, X, traj, scenario.c)
    H = CumulativeHazard(g, n, scenario.rho, scenario.lam, scenario.horizon)
    U = rng.uniform(size=n)
    T, capped = H.invert(-np.log(U))
    return T, capped, H, U


def gen_survival_time(scenario: SimScenario, x, ystar, rng: np.random.Generator) -> float:
    """Event time of one subject with covariates ``x`` and a true path ``ystar(t)``.
    Capped at the administrative horizon."""
    x = np.asarray(x, dtype=float)

    def g(rows, t):
        return risk_score(scenario.setting, x, ystar(t), scenario.c)

    H = CumulativeHazard(g, 1, scenario.rho, scenario.lam, scenario.horizon)
    T, _ = H.invert(np.array([-np.log(rng.uniform())]))
    return float(T[0])


def censoring_fraction_curve(scenario: SimScenario, n_pilot: int, rng: np.random.Generator):
    """Per-subject thresholds ``c_i``: subject ``i`` has an observed event iff
    the intercept is at least ``c_i``.  The hazard scales by ``exp(c)``, so
    one quadrature at ``c = 0`` serves every candidate intercept."""
    X = rng.uniform(scenario.x_low, scenario.x_high, size=(n_pilot, 4))
    traj, _ = draw_trajectories(scenario, n_pilot, rng)
    U = rng.uniform(size=n_pilot)
    C = rng.exponential(1.0 / scenario.censor_rate, size=n_pilot)
    H = CumulativeHazard(_subject_log_hazard(scenario, X, traj, 0.0), n_pilot, scenario.rho, scenario.lam,
                         scenario.horizon)
    h_end = H(np.minimum(C, scenario.horizon))
    with np.errstate(divide="ignore"):
        return np.log(-np.log(U)) - np.log(h_end)


def calibrate_intercept(scenario: SimScenario, target: float | None = None, n_pilot: int = 10_000,
                        rng: np.random.Generator | None = None, bracket=(-20.0, 20.0)) -> float:
    """Intercept ``c`` whose empirical censoring fraction on a pilot sample
    matches ``target``, found by bisection over ``bracket``."""
    target = scenario.target_censoring if target is None else target
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(scenario.seed)
    thresholds = censoring_fraction_curve(scenario, n_pilot, rng)

    def frac(c):
        return float(np.mean(thresholds > c))

    lo, hi = bracket
    f_lo, f_hi = frac(lo), frac(hi)
    if not f_hi <= target <= f_lo:
        raise ValueError(f"target censoring {target} unreachable: fraction ranges over [{f_hi:.3f}, {f_lo:.3f}] "
                         f"for c in [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    c = 0.5 * (lo + hi)
    if abs(frac(c) - target) > 0.01:
        raise ValueError(f"calibration stalled at censoring {frac(c):.3f} for target {target}")
    return c


@dataclass
class SimulatedData:
    dataset: Dataset
    X: np.ndarray
    trajectories: Trajectories
    true_time: np.ndarray
    censor_time: np.ndarray
    capped: np.ndarray
    scenario: SimScenario

    def true_score(self, t) -> np.ndarray:
        """True log relative hazard of every subject at time ``t``."""
        return risk_score(self.scenario.setting, self.X, self.trajectories(t), self.scenario.c)


def gen_dataset(scenario: SimScenario, n: int, rng: np.random.Generator | None = None) -> SimulatedData:
    """Simulate ``n`` subjects; only biomarker values at visits before the
    observed time are kept."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(scenario.seed)
    X = rng.uniform(scenario.x_low, scenario.x_high, size=(n, 4))
    traj, observed = draw_trajectories(scenario, n, rng)
    T_star, capped, _, _ = gen_survival_times(scenario, X, traj, rng)
    C = rng.exponential(1.0 / scenario.censor_rate, size=n)
    obs = np.minimum(np.minimum(T_star, C), scenario.horizon)
    event = (T_star <= C) & (T_star <= scenario.horizon) & ~capped
    visits = np.asarray(scenario.visits, dtype=float)
    subjects = []
    for i in range(n):
        # a time that rounds to 0 would leave no interval to observe
        t_obs = max(quantize_time(obs[i]), TIME_QUANTUM)
        hist = [(visits[k], (float(observed[i, k]),)) for k in range(len(visits)) if visits[k] < t_obs]
        subjects.append(Subject.create(str(i + 1), tuple(X[i]), hist, t_obs, int(event[i])))
    ds = Dataset(tuple(subjects), 4, 1)
    return SimulatedData(ds, X, traj, T_star, C, capped, scenario)


def calibrated(scenario: SimScenario, target: float | None = None, n_pilot: int = 10_000,
               seed: int | None = None) -> SimScenario:
    """Copy of ``scenario`` with the intercept calibrated to its censoring target."""
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    target = scenario.target_censoring if target is None else target
    c = calibrate_intercept(scenario, target, n_pilot, rng)
    return replace(scenario, c=c, target_censoring=target)
