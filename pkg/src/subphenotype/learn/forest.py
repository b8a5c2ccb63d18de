"""Random forest of Gini trees with bootstrap rows and per-split feature sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tree import Binner, Tree, grow_gini_tree


def _classes(y, n_classes=None) -> tuple[np.ndarray, int]:
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("y must be a non-empty 1-D label vector")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.max() >= k:
        raise ValueError("label outside [0, n_classes)")
    return y.astype(np.int64), max(k, 2)


@dataclass
class DecisionTree:
    tree: Tree
    n_features: int
    n_classes: int

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features")
        return self.tree.predict(X)

    def feature_importance(self) -> np.ndarray:
        return self.tree.importances(self.n_features)


def train_tree(X, y, max_depth=None, n_classes=None, features_per_split=None, seed=0) -> DecisionTree:
    X = np.asarray(X, dtype=float)
    y, k = _classes(y, n_classes)
    binner = Binner.fit(X)
    tree = grow_gini_tree(binner.transform(X), y, binner, k, max_depth, features_per_split,
                          np.random.default_rng(seed))
    return DecisionTree(tree, X.shape[1], k)


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    n_classes: int
    max_depth: int | None
    features_per_split: int
    seed: int
    bootstrap: bool = True
    tree_seeds: list[int] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        total = np.zeros((X.shape[0], self.n_classes))
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def feature_importance(self) -> np.ndarray:
        out = np.zeros(self.n_features)
        for t in self.trees:
            out += t.importances(self.n_features)
        return out

    def to_dict(self) -> dict:
        return {"kind": "forest", "n_features": self.n_features, "n_classes": self.n_classes,
                "max_depth": self.max_depth, "features_per_split": self.features_per_split,
                "seed": self.seed, "bootstrap": self.bootstrap, "tree_seeds": self.tree_seeds,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], int(d["n_features"]), int(d["n_classes"]),
                   d["max_depth"], int(d["features_per_split"]), int(d["seed"]), bool(d["bootstrap"]),
                   list(d["tree_seeds"]))


def train_forest(
    X,
    y,
    n_trees: int = 200,
    max_depth: int | None = 8,
    features_per_split: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    n_classes: int | None = None,
) -> ForestModel:
    """Bootstrap-aggregated Gini trees; ``features_per_split`` defaults to floor(sqrt(d))."""
    X = np.asarray(X, dtype=float)
    y, k = _classes(y, n_classes)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X and y do not match")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n, d = X.shape
    m = max(1, int(math.isqrt(d))) if features_per_split is None else int(features_per_split)
    binner = Binner.fit(X)
    codes = binner.transform(X)
    seeds = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32).tolist()
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(grow_gini_tree(codes[rows], y[rows], binner, k, max_depth, m, rng))
    return ForestModel(trees, d, k, max_depth, m, seed, bootstrap, seeds)
