import math

import numpy as np
import pytest
from scipy import integrate

from tdsurv.data import build_long_format
from tdsurv.simulate import (CumulativeHazard, SimScenario, _subject_log_hazard, calibrate_intercept,
                             censoring_fraction_curve, draw_trajectories, gen_dataset, gen_survival_time,
                             gen_survival_times, gen_trajectory, risk_score)


def zero_hazard(rows, t):
    return np.zeros((len(rows),) + np.shape(t)[1:])


def test_scenario_defaults():
    s1, s2 = SimScenario(setting=1), SimScenario(setting=4)
    assert (s1.beta0, s1.beta1, s1.beta2, s1.sigma) == (3.2, -0.07, 0.0, (1.44, 0.6, 0.0))
    assert (s2.beta2, s2.sigma) == (0.004, (1.44, 0.6, 0.09))
    assert (s1.rho, s1.lam, s1.noise_sd, s1.censor_rate, s1.horizon) == (1.4, 0.1, 0.3, 1 / 7, 15.0)
    assert s1.visits == tuple(float(t) for t in range(15))
    with pytest.raises(ValueError):
        SimScenario(setting=5)


def test_risk_score_examples():
    assert risk_score(1, [0, 0, 0, 0], 0) == 0
    assert risk_score(1, [1, 1, 1, 1], 1) == pytest.approx(10.3, abs=1e-12)
    assert risk_score(3, [0, 0, 0, 0], 0) == pytest.approx(4 / 3, abs=1e-12)
    # signed cube root keeps negative radicands real
    assert np.isfinite(risk_score(3, [0, 0, 0, 1], -20.0))
    with pytest.raises(ValueError):
        risk_score(3, [0, 0, -1, 0], 0)


def test_trajectory_examples():
    quiet = dict(sigma=(0.0, 0.0, 0.0), noise_sd=0.0)
    path, obs = gen_trajectory(SimScenario(setting=1, **quiet), np.random.default_rng(0))
    assert path(0) == 3.2 and obs[0].values == (3.2,)
    path, _ = gen_trajectory(SimScenario(setting=2, **quiet), np.random.default_rng(0))
    assert path(10) == pytest.approx(2.9, abs=1e-12)
    traj, _ = draw_trajectories(SimScenario(setting=1), 100, np.random.default_rng(1))
    assert np.all(traj.coef[:, 2] == 0)


def test_weibull_inversion_closed_form():
    H = CumulativeHazard(zero_hazard, 2, 1.4, 0.1, 15.0)
    T, capped = H.invert(np.array([0.1, 0.1 * 2 ** 1.4]))
    assert not capped.any()
    assert T == pytest.approx([1.0, 2.0], abs=1e-7)
    assert H(np.array([3.0, 15.0])) == pytest.approx([0.1 * 3 ** 1.4, 0.1 * 15 ** 1.4], rel=1e-8)


class FixedUniform:
    def __init__(self, u):
        self.u = u

    def uniform(self, *args, **kwargs):
        return self.u


def test_gen_survival_time_single_subject():
    sc = SimScenario(setting=1)
    T = gen_survival_time(sc, [0, 0, 0, 0], lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                          FixedUniform(math.exp(-0.1)))
    assert T == pytest.approx(1.0, abs=1e-7)
    path = lambda t: 3.2 - 0.07 * np.asarray(t, dtype=float)
    T_lo = gen_survival_time(SimScenario(setting=1, c=-6), [0.5] * 4, path, FixedUniform(0.3))
    T_hi = gen_survival_time(SimScenario(setting=1, c=-5), [0.5] * 4, path, FixedUniform(0.3))
    assert T_hi < T_lo


@pytest.mark.parametrize("setting", [1, 2, 3, 4])
def test_quadrature_against_adaptive_reference(setting):
    sc = SimScenario(setting=setting)
    rng = np.random.default_rng(setting)
    n = 12
    X = rng.uniform(-0.5, 1.5, size=(n, 4))
    traj, _ = draw_trajectories(sc, n, rng)
    g = _subject_log_hazard(sc, X, traj, -5.0)
    H = CumulativeHazard(g, n, sc.rho, sc.lam, sc.horizon)
    for i in range(n):
        f = lambda t: sc.lam * sc.rho * t ** (sc.rho - 1) * math.exp(min(g(np.array([i]), np.array([t]))[0], 600))
        ref = sum(integrate.quad(f, a, a + 1, epsabs=0, epsrel=1e-12, limit=500)[0] for a in range(15))
        assert abs(H.grid[i, -1] - ref) <= 1e-8 * max(ref, 1.0)


@pytest.mark.parametrize("setting", [1, 2, 3, 4])
def test_round_trip_and_validation(setting):
    sc = SimScenario(setting=setting, c=-5.0)
    rng = np.random.default_rng(10 + setting)
    X = rng.uniform(-0.5, 1.5, size=(300, 4))
    traj, _ = draw_trajectories(sc, 300, rng)
    T, capped, H, U = gen_survival_times(sc, X, traj, rng)
    assert np.all(np.abs(H(T)[~capped] + np.log(U[~capped])) < 1e-6)
    assert np.all(T[capped] == sc.horizon)
    data = gen_dataset(sc, 200, np.random.default_rng(setting))
    recs = build_long_format(data.dataset.subjects)
    assert len(recs) == len(data.dataset.table)


def test_setting_one_and_two_coincide_without_quadratic_term():
    s1 = SimScenario(setting=1, c=-5)
    s2 = SimScenario(setting=2, c=-5, beta2=0.0, sigma=(1.44, 0.6, 0.0))
    a = gen_dataset(s1, 100, np.random.default_rng(3))
    b = gen_dataset(s2, 100, np.random.default_rng(3))
    assert a.dataset == b.dataset


def test_dataset_rules():
    sc = SimScenario(setting=1, c=-5.1)
    a = gen_dataset(sc, 300, np.random.default_rng(7))
    b = gen_dataset(sc, 300, np.random.default_rng(7))
    assert a.dataset == b.dataset
    for s, T, C in zip(a.dataset.subjects, a.true_time, a.censor_time):
        obs = min(T, C, sc.horizon)
        assert s.obs_time == pytest.approx(obs, abs=1e-9)
        assert all(m.time < s.obs_time for m in s.history)
        assert len(s.history) == min(15, math.ceil(s.obs_time - 1e-12))
    short = [s for s in a.dataset.subjects if s.obs_time <= 1]
    assert short and all(len(s.history) == 1 for s in short)


def test_calibration_monotone_and_targets():
    sc = SimScenario(setting=1)
    th = censoring_fraction_curve(sc, 3000, np.random.default_rng(0))
    fracs = [np.mean(th > c) for c in (-8, -6, -4, -2)]
    assert fracs == sorted(fracs, reverse=True)
    c = calibrate_intercept(sc, 0.4, 3000, np.random.default_rng(0))
    assert abs(np.mean(th > c) - 0.4) <= 0.01
    data = gen_dataset(SimScenario(setting=1, c=c), 500, np.random.default_rng(1))
    assert abs(data.dataset.censoring_fraction - 0.4) <= 0.03


def test_calibration_unreachable_reports_range():
    with pytest.raises(ValueError, match="unreachable"):
        calibrate_intercept(SimScenario(setting=4), 0.8, 2000, np.random.default_rng(0))
    with pytest.raises(ValueError):
        calibrate_intercept(SimScenario(setting=1), 1.5, 100, np.random.default_rng(0))


def test_tiny_times_stay_positive():
    sc = SimScenario(setting=1, c=8.0)
    data = gen_dataset(sc, 200, np.random.default_rng(0))
    assert min(s.obs_time for s in data.dataset.subjects) > 0
