import numpy as np
import pytest

from imbsynth.gbdt import GBDTClassifier, GBDTConfig, GBDTError


def _blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X0 = rng.normal(0.0, 1.0, size=(n, 3))
    X1 = rng.normal(4.0, 1.0, size=(n, 3))
    X = np.vstack([X0, X1])
    y = np.array([0] * n + [1] * n)
    return X, y


def test_config_validation():
    with pytest.raises(GBDTError):
        GBDTConfig(n_rounds=0)
    with pytest.raises(GBDTError):
        GBDTConfig(max_depth=0)


def test_separable_accuracy():
    X, y = _blobs()
    clf = GBDTClassifier(GBDTConfig(n_rounds=30)).fit(X, y)
    assert (clf.predict(X) == y).mean() >= 0.99


def test_generalizes_to_held_out():
    X, y = _blobs(seed=1)
    Xt, yt = _blobs(seed=2)
    clf = GBDTClassifier().fit(X, y)
    assert (clf.predict(Xt) == yt).mean() >= 0.97


def test_deterministic():
    X, y = _blobs(seed=3)
    p1 = GBDTClassifier().fit(X, y).predict_proba(X)
    p2 = GBDTClassifier().fit(X, y).predict_proba(X)
    assert np.array_equal(p1, p2)


def test_proba_bounds_and_threshold():
    X, y = _blobs(n=50, seed=4)
    clf = GBDTClassifier(GBDTConfig(n_rounds=5)).fit(X, y)
    p = clf.predict_proba(X)
    assert np.all(p > 0.0) and np.all(p < 1.0)
    assert np.array_equal(clf.predict(X), (p >= 0.5).astype(np.int64))


def test_requires_both_classes():
    X = np.zeros((10, 2))
    with pytest.raises(GBDTError):
        GBDTClassifier().fit(X, np.zeros(10))
    with pytest.raises(GBDTError):
        GBDTClassifier().fit(X, np.full(10, 2.0))


def test_min_leaf_blocks_tiny_splits():
    """With n < 2*min_leaf every tree is a single leaf => constant scores."""
    rng = np.random.default_rng(5)
    X = rng.normal(size=(8, 2))
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    clf = GBDTClassifier(GBDTConfig(min_leaf=5, n_rounds=3)).fit(X, y)
    scores = clf.decision_function(rng.normal(size=(20, 2)))
    assert np.allclose(scores, scores[0])


def test_imbalanced_base_score_sign():
    X, y = _blobs(n=100, seed=6)
    keep = np.concatenate([np.arange(100), 100 + np.arange(10)])
    clf = GBDTClassifier(GBDTConfig(n_rounds=1)).fit(X[keep], y[keep])
    assert clf.base_score < 0  # log-odds of a 10/110 positive rate
