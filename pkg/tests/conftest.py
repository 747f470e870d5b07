import numpy as np
import pytest

from tdsurv.data import LongTable


def table_from(tstart, tstop, event, X=None, ids=None):
    tstop = np.asarray(tstop, dtype=float)
    n = len(tstop)
    X = np.zeros((n, 1)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    ids = np.array([str(i) for i in range(n)] if ids is None else [str(i) for i in ids], dtype=object)
    return LongTable(ids, np.asarray(tstart, dtype=float), tstop, np.asarray(event, dtype=int), X)


def random_table(rng, n_subjects=8, p=2, max_visits=3, tie_grid=None):
    """Random counting-process table; ``tie_grid`` rounds stop times to force ties."""
    ids, t0, t1, ev, X = [], [], [], [], []
    for i in range(n_subjects):
        T = rng.uniform(0.5, 5.0)
        if tie_grid:
            T = max(tie_grid, round(T / tie_grid) * tie_grid)
        k = rng.integers(1, max_visits + 1)
        cuts = np.sort(rng.uniform(0, T, size=k - 1)) if k > 1 else np.zeros(0)
        cuts = np.unique(np.round(cuts, 6))
        cuts = cuts[(cuts > 0) & (cuts < T)]
        edges = np.concatenate([[0.0], cuts, [T]])
        d = int(rng.random() < 0.7)
        for a, b in zip(edges[:-1], edges[1:]):
            ids.append(str(i)); t0.append(a); t1.append(b)
            ev.append(d if b == T else 0)
            X.append(rng.normal(size=p))
    if not any(ev):
        ev[-1] = 1
    return LongTable(np.array(ids, dtype=object), np.array(t0), np.array(t1), np.array(ev), np.array(X))


@pytest.fixture
def three_subjects():
    """(T, delta) = (1,1), (2,1), (3,0), one record each."""
    return table_from([0, 0, 0], [1, 2, 3], [1, 1, 0])
