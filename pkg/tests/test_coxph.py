import math

import numpy as np
import pytest

from tdsurv.coxloss import efron_loss, risk_sets_for
from tdsurv.coxph import CollinearityError, CoxFit, baseline_for, fit_coxph, loglik_at, predict_coxph

from conftest import random_table, table_from


def test_closed_form_beta():
    t = table_from([0, 0, 0], [1, 2, 3], [1, 1, 0], X=[0, 1, 0])
    f = fit_coxph(t)
    assert f.converged
    assert f.coef[0] == pytest.approx(0.5 * math.log(2), abs=1e-8)
    assert np.max(np.abs(f.score_vector)) < 1e-9


def test_constant_covariate_warns():
    t = table_from([0, 0, 0], [1, 2, 3], [1, 1, 0], X=[[1, 0], [1, 1], [1, 0]])
    f = fit_coxph(t)
    assert f.coef[0] == 0 and f.warnings and "constant" in f.warnings[0]


def test_collinear_design_rejected():
    rng = np.random.default_rng(0)
    t = random_table(rng, 20, p=1)
    X = np.column_stack([t.X[:, 0], 2 * t.X[:, 0] + 1])
    with pytest.raises(CollinearityError):
        fit_coxph(type(t)(t.ids, t.tstart, t.tstop, t.event, X))


def test_monotone_likelihood_flagged():
    # covariate perfectly separates: every event has a larger x than everyone still at risk
    t = table_from([0] * 4, [1, 2, 3, 4], [1, 1, 1, 0], X=[3, 2, 1, 0])
    f = fit_coxph(t)
    assert not f.converged and f.warnings


@pytest.mark.parametrize("seed", range(5))
def test_grid_search_oracle(seed):
    rng = np.random.default_rng(seed)
    t = random_table(rng, 10, p=1, max_visits=2)
    f = fit_coxph(t)
    if not f.converged:
        pytest.skip("separated instance")
    grid = np.arange(f.coef[0] - 0.5, f.coef[0] + 0.5, 1e-4)
    losses = [loglik_at(t, [b]) for b in grid]
    assert abs(grid[int(np.argmin(losses))] - f.coef[0]) < 2e-4


@pytest.mark.parametrize("seed", range(5))
def test_agreement_optimality_and_invariance(seed):
    rng = np.random.default_rng(50 + seed)
    t = random_table(rng, 30, p=3, tie_grid=0.25)
    f = fit_coxph(t)
    assert f.converged and f.iterations <= 50
    assert f.loss == pytest.approx(efron_loss(t.X @ f.coef, risk_sets_for(t)), abs=1e-10)
    assert loglik_at(t, f.coef) == pytest.approx(efron_loss(t.X @ f.coef, risk_sets_for(t)), abs=1e-12)
    for k in range(3):
        for eps in (1e-3, -1e-3):
            b = f.coef.copy(); b[k] += eps
            assert f.loss <= loglik_at(t, b)
    info = f.information
    assert np.allclose(info, info.T) and np.linalg.eigvalsh(info).min() >= -1e-10
    shifted = type(t)(t.ids, t.tstart, t.tstop, t.event, t.X + np.array([5.0, -3.0, 100.0]))
    assert np.max(np.abs(fit_coxph(shifted).coef - f.coef)) < 1e-8


def test_zero_loss_value(three_subjects):
    assert loglik_at(three_subjects, [0.0]) == pytest.approx(math.log(6) / 3, abs=1e-12)


def test_prediction_delegates(three_subjects):
    f = CoxFit(np.zeros(1), 0.0, True, 0, np.zeros((1, 1)), np.zeros(1))
    b = baseline_for(f, three_subjects)
    curve = predict_coxph(f, b, [], [0.0], 1.0, [2.0])
    assert curve.prob[0] == pytest.approx(math.exp(-0.5), abs=1e-12)
    doubled = CoxFit(np.array([0.25]), 0.0, True, 0, np.zeros((1, 1)), np.zeros(1))
    half = CoxFit(np.array([0.5]), 0.0, True, 0, np.zeros((1, 1)), np.zeros(1))
    assert np.array_equal(doubled.score([[2.0]]), half.score([[1.0]]))


def test_json_report():
    t = table_from([0, 0, 0, 0], [1, 2, 3, 4], [1, 1, 0, 1], X=[0, 1, 0, 0.5])
    f = fit_coxph(t)
    doc = f.to_json()
    assert doc["converged"] and len(doc["standard_errors"]) == 1
    back = CoxFit.from_json(doc)
    assert np.array_equal(back.coef, f.coef)
