import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from metagps.metrics import MetricsReport, accuracy, davies_bouldin, macro_f1, silhouette


# --------------------------------------------------------------- macro-F1


def test_macro_f1_examples():
    assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1], range(3)) == 1.0
    # class 0: TP=1, FP=1, FN=1, and class 1 mirrors it
    assert macro_f1([0, 1, 0, 1], [0, 0, 1, 1], [0, 1]) == 0.5
    assert abs(macro_f1([0, 1], [0, 1], [0, 1, 2]) - 2 / 3) <= 1e-15


def test_macro_f1_needs_classes():
    with pytest.raises(ValueError):
        macro_f1([0], [0], [])


def _label_sets(n, rng):
    if n <= 4:
        return list(itertools.product(range(3), repeat=n))
    fixed = [tuple([0] * n), tuple([2] * n), tuple(i % 3 for i in range(n)),
             tuple(i % 2 for i in range(n))]
    return fixed + [tuple(rng.integers(0, 3, size=n)) for _ in range(26)]


def test_macro_f1_and_accuracy_against_confusion_oracle():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        for labels in _label_sets(n, rng):
            for preds in itertools.product(range(3), repeat=n):
                got = macro_f1(preds, labels, range(3))
                assert abs(got - oracles.macro_f1(preds, labels, range(3))) <= 1e-12
                assert 0.0 <= got <= 1.0
                assert accuracy(preds, labels) == sum(p == t for p, t in zip(preds, labels)) / n


# --------------------------------------------------------------- silhouette


def test_silhouette_line_example():
    E = np.array([[0.0], [1.0], [10.0], [11.0]])
    want = (9.5 / 10.5 + 8.5 / 9.5) / 2
    assert abs(silhouette(E, [0, 0, 1, 1]) - want) <= 1e-15
    assert abs(want - 0.8997493734335839) <= 1e-15


def test_silhouette_tight_clusters_and_interleaved():
    rng = np.random.default_rng(1)
    tight = np.vstack([rng.normal(size=(10, 3)) * 0.01, 100 + rng.normal(size=(10, 3)) * 0.01])
    assert silhouette(tight, [0] * 10 + [1] * 10) >= 0.9
    pts = rng.normal(size=(8, 2))
    same = np.vstack([pts, pts])
    assert silhouette(same, [0] * 8 + [1] * 8) <= 0.0


def test_silhouette_singleton_and_single_class():
    # the singleton point scores 0; the pair scores (b - a)/b each
    E = np.array([[0.0], [1.0], [5.0]])
    want = ((5 - 1) / 5 + (4 - 1) / 4 + 0.0) / 3
    assert abs(silhouette(E, [0, 0, 1]) - want) <= 1e-15
    with pytest.raises(ValueError):
        silhouette(E, [0, 0, 0])


# --------------------------------------------------------------- Davies-Bouldin


def test_davies_bouldin_examples():
    assert davies_bouldin(np.array([[1.0, 1.0]] * 3 + [[4.0, 0.0]] * 2), [0, 0, 0, 1, 1]) == 0.0
    assert abs(davies_bouldin(np.array([[0.0], [2.0], [10.0], [12.0]]), [0, 0, 1, 1]) - 0.2) <= 1e-15


def test_davies_bouldin_errors():
    with pytest.raises(ValueError):
        davies_bouldin(np.ones((3, 2)), [0, 0, 0])
    with pytest.raises(ValueError, match="coincident"):
        davies_bouldin(np.array([[0.0], [2.0], [1.0], [1.0]]), [0, 0, 1, 1])


@st.composite
def labelled_points(draw, max_n=30):
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    m = draw(st.integers(2, min(5, n)))
    labels = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    rng.shuffle(labels)
    return rng.normal(size=(n, 3)) * rng.uniform(0.1, 5), labels


@given(labelled_points(), st.floats(0.01, 100))
def test_cluster_metrics_match_oracles(data, scale):
    E, labels = data
    sc = silhouette(E, labels)
    db = davies_bouldin(E, labels)
    assert -1 <= sc <= 1 and db >= 0
    assert abs(sc - oracles.silhouette(E, list(labels))) <= 1e-10
    assert abs(db - oracles.davies_bouldin(E, list(labels))) <= 1e-10 * max(1.0, db)
    # DB is scale invariant
    assert abs(davies_bouldin(E * scale, labels) - db) <= 1e-9 * max(1.0, db)


# --------------------------------------------------------------- report


def test_report_summary():
    r = MetricsReport(accuracy=[0.5, 0.7], macro_f1=[0.4, 0.6], tasks=[{"a": 1}], wall_clock=1.0)
    assert abs(r.accuracy_mean - 0.6) <= 1e-15 and abs(r.accuracy_std - 0.1) <= 1e-15
    d = r.to_dict()
    assert d["accuracy"]["per_repeat"] == [0.5, 0.7] and "tasks" not in d and "wall_clock" not in d
    assert r.to_dict(include_tasks=True, include_timing=True)["wall_clock"] == 1.0
