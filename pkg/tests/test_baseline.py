import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdsurv.baseline import (BaselineHazard, breslow, predict_subject, predict_survival, survival_from_score,
                             update_prediction, write_baseline, write_predictions)
from tdsurv.data import Subject

from conftest import random_table, table_from


class Linear:
    def __init__(self, coef):
        self.coef = np.asarray(coef, dtype=float)

    def score(self, X):
        return np.atleast_2d(X) @ self.coef


def test_nelson_aalen(three_subjects):
    b = breslow(three_subjects.tstart, three_subjects.tstop, three_subjects.event, np.zeros(3))
    assert b.times.tolist() == [1, 2]
    # Nelson-Aalen in floating point: 1/3, then 1/3 + 1/2
    assert b.cumhaz[0] == 1 / 3 and b.cumhaz[1] == 1 / 3 + 1 / 2
    assert b(0.5) == 0 and b(1.0) == 1 / 3 and b(10) == 1 / 3 + 1 / 2
    assert abs(b(2.0) - 5 / 6) <= 2 ** -52


def test_constant_scores_scale_increments(three_subjects):
    t = three_subjects
    b0 = breslow(t.tstart, t.tstop, t.event, np.zeros(3))
    b1 = breslow(t.tstart, t.tstop, t.event, np.full(3, 0.7))
    assert np.allclose(b1.cumhaz, b0.cumhaz * math.exp(-0.7), rtol=1e-14)


def test_tie_increment():
    b = breslow([0, 0], [1, 1], [1, 1], np.zeros(2))
    assert b.cumhaz.tolist() == [1.0]


def test_worked_prediction(three_subjects):
    t = three_subjects
    b = breslow(t.tstart, t.tstop, t.event, np.zeros(3))
    curve = predict_survival(Linear([0.0, 0.0]), b, [0.0], [0.0], 1.0, [2.0])
    assert curve.prob[0] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert survival_from_score(b, 0.0, 2.0, [2.5])[0] == 1.0
    with pytest.raises(ValueError):
        survival_from_score(b, 0.0, 2.0, [2.0])


def test_baseline_validation():
    with pytest.raises(ValueError):
        BaselineHazard(np.array([1.0, 1.0]), np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        BaselineHazard(np.array([1.0, 2.0]), np.array([0.2, 0.1]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-20, 20))
def test_joint_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    t = random_table(rng, 8, tie_grid=0.5)
    g = rng.normal(size=len(t))
    b0 = breslow(t.tstart, t.tstop, t.event, g)
    b1 = breslow(t.tstart, t.tstop, t.event, g + c)
    u = np.linspace(0.6, 6, 10)
    for score in g[:3]:
        p0 = survival_from_score(b0, score, 0.5, u)
        p1 = survival_from_score(b1, score + c, 0.5, u)
        assert np.max(np.abs(p0 - p1)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_curves_monotone_and_bounded(seed):
    rng = np.random.default_rng(seed)
    t = random_table(rng, 8)
    b = breslow(t.tstart, t.tstop, t.event, rng.normal(size=len(t)))
    p = survival_from_score(b, rng.normal(), 0.1, np.sort(rng.uniform(0.2, 6, 12)))
    assert np.all(np.diff(p) <= 0) and np.all((p >= 0) & (p <= 1))


def test_split_records_leave_baseline_unchanged():
    t = table_from([0, 0, 0], [1, 2, 3], [1, 1, 0])
    g = np.array([0.2, -0.4, 0.9])
    split = table_from([0, 0, 0, 1.5], [1, 1.5, 3, 2], [1, 0, 0, 1])
    a = breslow(t.tstart, t.tstop, t.event, g)
    b = breslow(split.tstart, split.tstop, split.event, np.array([0.2, -0.4, 0.9, -0.4]))
    assert np.array_equal(a.times, b.times)
    assert np.allclose(a.cumhaz, b.cumhaz, rtol=0, atol=1e-12)


def subject():
    return Subject.create("s", (1.0,), [(0, (0.0,)), (2, (1.0,))], 10.0, 0)


def test_prediction_uses_locf_and_updates():
    b = BaselineHazard(np.array([1.0, 2.5, 4.0]), np.array([0.1, 0.3, 0.6]))
    m = Linear([0.5, 1.0])
    s = subject()
    early = predict_subject(m, b, s, 1.5, [3.0, 5.0])
    late = update_prediction(m, b, s, 3.0, [5.0], previous_s=1.5)
    g_late = 0.5 + 1.0
    assert late.prob[0] == pytest.approx(math.exp(-(0.6 - 0.3) * math.exp(g_late)))
    assert early.prob[0] == pytest.approx(math.exp(-(0.3 - 0.1) * math.exp(0.5)))
    with pytest.raises(ValueError):
        update_prediction(m, b, s, 1.0, [5.0], previous_s=1.5)
    same = update_prediction(m, b, s, 1.5, [3.0, 5.0])
    assert np.array_equal(same.prob, early.prob)


def test_update_ratio_without_new_data():
    b = BaselineHazard(np.array([1.0, 2.5, 4.0]), np.array([0.1, 0.3, 0.6]))
    s = Subject.create("s", (1.0,), [(0, (0.0,))], 10.0, 0)
    m = Linear([0.5, 1.0])
    a = predict_subject(m, b, s, 1.0, [2.0, 5.0])
    c = update_prediction(m, b, s, 2.0, [5.0], previous_s=1.0)
    assert c.prob[0] == pytest.approx(a.prob[1] / a.prob[0], rel=1e-12)


def test_higher_score_lower_curve():
    b = BaselineHazard(np.array([1.0, 2.0]), np.array([0.2, 0.5]))
    lo = survival_from_score(b, 0.0, 0.5, [1.5, 3.0])
    hi = survival_from_score(b, 1.0, 0.5, [1.5, 3.0])
    assert np.all(hi <= lo)


def test_csv_exports(tmp_path):
    b = BaselineHazard(np.array([1.0, 2.0]), np.array([0.2, 0.5]))
    write_baseline(b, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines() == ["time,cumhaz", "1.0,0.2", "2.0,0.5"]
    curve = predict_subject(Linear([0.0, 0.0]), b, subject(), 0.5, [1.5])
    write_predictions([curve], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id,s,u,prob"
