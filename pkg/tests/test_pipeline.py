import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdsurv.coxloss import TrainConfig
from tdsurv.pipeline import MetricRow, TrainedModel, evaluate, subject_folds, summarize, train_model, worker_count
from tdsurv.simulate import SimScenario, gen_dataset


@given(st.lists(st.text(min_size=1, max_size=6), min_size=5, max_size=60, unique=True),
       st.integers(2, 5), st.integers(0, 100))
def test_folds_partition(ids, k, seed):
    folds = subject_folds(ids, k, seed)
    flat = [i for f in folds for i in f]
    assert sorted(flat) == sorted(ids)
    assert max(map(len, folds)) - min(map(len, folds)) <= 1
    assert folds == subject_folds(list(reversed(ids)), k, seed)


def test_folds_reject_bad_input():
    with pytest.raises(ValueError):
        subject_folds(["a", "a", "b"], 2, 0)
    with pytest.raises(ValueError):
        subject_folds(["a"], 2, 0)


def test_summarize_ignores_nan():
    rows = [MetricRow(1, 1, "BS", v, 10, 0) for v in (0.1, 0.3, float("nan"))]
    (s,) = summarize(rows)
    assert s["mean"] == pytest.approx(0.2) and s["sd"] == pytest.approx(np.std([0.1, 0.3], ddof=1))
    assert s["n"] == 2


def test_worker_count(monkeypatch):
    monkeypatch.setenv("TDSURV_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("TDSURV_THREADS", "zero")
    with pytest.raises(ValueError):
        worker_count()


@pytest.fixture(scope="module")
def small_data():
    sc = SimScenario(setting=1, c=-5.1)
    return gen_dataset(sc, 150, np.random.default_rng(0)).dataset, gen_dataset(sc, 80, np.random.default_rng(1)).dataset


@pytest.mark.parametrize("kind", ["tdcoxsnn", "tdcoxph"])
def test_trained_model_json_round_trip(small_data, kind):
    train, test = small_data
    trained = train_model(train, kind, config=TrainConfig(epochs=2))
    back = TrainedModel.from_json(json.loads(json.dumps(trained.to_json())))
    X = train.table.X[:20]
    assert np.array_equal(back.score(X), trained.score(X))
    a = evaluate(trained, test, [1.0], [1.0, 2.0])
    b = evaluate(back, test, [1.0], [1.0, 2.0])
    assert [r.astuple() for r in a] == [r.astuple() for r in b]


def test_unknown_model_rejected(small_data):
    with pytest.raises(ValueError):
        train_model(small_data[0], "forest")
    with pytest.raises(ValueError):
        TrainedModel.from_json({"model": "forest"})
