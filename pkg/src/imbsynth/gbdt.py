"""Deterministic gradient-boosted regression trees on logistic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GBDTError(Exception):
    pass


@dataclass(frozen=True)
class GBDTConfig:
    n_rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1 or self.max_depth < 1:
            raise GBDTError("n_rounds and max_depth must be >= 1")

    def to_dict(self) -> dict:
        return {"n_rounds": self.n_rounds, "max_depth": self.max_depth,
                "learning_rate": self.learning_rate, "min_leaf": self.min_leaf,
                "seed": self.seed}


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _fit_tree(X, grad, hess, depth, min_leaf):
    """Greedy split maximizing squared-gradient gain; Newton leaf values."""
    node = _Node()
    g_sum = grad.sum()
    h_sum = hess.sum()
    node.value = -g_sum / (h_sum + 1e-12)
    n = X.shape[0]
    if depth == 0 or n < 2 * min_leaf:
        return node

    best_gain = 0.0
    best = None
    parent_score = g_sum * g_sum / (h_sum + 1e-12)
    lo, hi = min_leaf - 1, n - min_leaf  # candidate split positions [lo, hi)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        gs = np.cumsum(grad[order])[lo:hi]
        hs = np.cumsum(hess[order])[lo:hi]
        valid = xs[lo:hi] != xs[lo + 1:hi + 1]
        if not valid.any():
            continue
        gains = (gs * gs / (hs + 1e-12)
                 + (g_sum - gs) ** 2 / (h_sum - hs + 1e-12)
                 - parent_score)
        gains[~valid] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best_gain + 1e-12:
            best_gain = float(gains[i])
            best = (j, 0.5 * (xs[lo + i] + xs[lo + i + 1]))
    if best is None:
        return node

    j, thr = best
    node.feature, node.threshold = j, thr
    mask = X[:, j] <= thr
    node.left = _fit_tree(X[mask], grad[mask], hess[mask], depth - 1, min_leaf)
    node.right = _fit_tree(X[~mask], grad[~mask], hess[~mask], depth - 1, min_leaf)
    return node


def _predict_tree(node: _Node, X: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(X.shape[0], node.value)
    mask = X[:, node.feature] <= node.threshold
    out = np.empty(X.shape[0])
    out[mask] = _predict_tree(node.left, X[mask])
    out[~mask] = _predict_tree(node.right, X[~mask])
    return out


class GBDTClassifier:
    """Binary classifier: boosted regression trees on logistic loss.

    No row or column subsampling, so training is fully deterministic.
    """

    def __init__(self, config: GBDTConfig | None = None):
        self.config = config or GBDTConfig()
        self.trees: list[_Node] = []
        self.base_score = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GBDTClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) != {0.0, 1.0}:
            raise GBDTError("fit needs both classes present (labels 0 and 1)")
        p0 = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        self.base_score = float(np.log(p0 / (1 - p0)))
        f = np.full(X.shape[0], self.base_score)
        self.trees = []
        for _ in range(self.config.n_rounds):
            p = 1.0 / (1.0 + np.exp(-f))
            grad = p - y
            hess = p * (1.0 - p)
            tree = _fit_tree(X, grad, hess, self.config.max_depth, self.config.min_leaf)
            self.trees.append(tree)
            f = f + self.config.learning_rate * _predict_tree(tree, X)
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        f = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            f = f + self.config.learning_rate * _predict_tree(tree, X)
        return f

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """P(class 1) clipped away from exact 0 and 1."""
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.clip(p, 1e-9, 1 - 1e-9)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
