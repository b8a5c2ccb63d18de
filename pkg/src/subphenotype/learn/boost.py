"""Newton-boosted trees for logistic (binary) and softmax (multiclass) loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forest import _classes
from .linear import sigmoid
from .tree import MAX_BINS, Binner, Tree, grow_newton_tree

_LOG_FLOOR = 1e-15


def _softmax(F: np.ndarray) -> np.ndarray:
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _loss(F: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    if n_classes == 2:
        z = F[:, 0]
        return float(np.mean(np.logaddexp(0.0, z) - y * z))
    Z = F - F.max(axis=1, keepdims=True)
    lse = np.log(np.exp(Z).sum(axis=1))
    return float(np.mean(lse - Z[np.arange(y.size), y]))


@dataclass
class GbdtModel:
    """Per-class tree ensembles; binary models keep a single margin column."""

    trees: list[list[Tree]]  # trees[round][output]
    n_features: int
    n_classes: int
    base_score: np.ndarray
    learning_rate: float
    max_depth: int
    l2_leaf: float
    loss_trace: list[float] = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    @property
    def n_outputs(self) -> int:
        return 1 if self.n_classes == 2 else self.n_classes

    def margin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        F = np.tile(self.base_score, (X.shape[0], 1))
        for round_trees in self.trees:
            for c, t in enumerate(round_trees):
                F[:, c] += t.predict(X)[:, 0]
        return F

    def predict_proba(self, X) -> np.ndarray:
        F = self.margin(X)
        if self.n_classes == 2:
            p = sigmoid(F[:, 0])
            return np.column_stack([1.0 - p, p])
        return _softmax(F)

    def feature_importance(self) -> np.ndarray:
        out = np.zeros(self.n_features)
        for round_trees in self.trees:
            for t in round_trees:
                out += t.importances(self.n_features)
        return out

    def to_dict(self) -> dict:
        return {"kind": "gbdt", "n_features": self.n_features, "n_classes": self.n_classes,
                "base_score": self.base_score.tolist(), "learning_rate": self.learning_rate,
                "max_depth": self.max_depth, "l2_leaf": self.l2_leaf, "loss_trace": self.loss_trace,
                "trees": [[t.to_dict() for t in r] for r in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls([[Tree.from_dict(t) for t in r] for r in d["trees"]], int(d["n_features"]),
                   int(d["n_classes"]), np.asarray(d["base_score"], dtype=float), float(d["learning_rate"]),
                   int(d["max_depth"]), float(d["l2_leaf"]), list(d["loss_trace"]))


def prior_base_score(y: np.ndarray, n_classes: int) -> np.ndarray:
    prior = np.bincount(y, minlength=n_classes) / y.size
    if n_classes == 2:
        p = np.clip(prior[1], _LOG_FLOOR, 1 - _LOG_FLOOR)
        return np.array([np.log(p / (1 - p))])
    return np.log(np.maximum(prior, _LOG_FLOOR))


def train_gbdt(
    X,
    y,
    n_rounds: int = 300,
    lr: float = 0.1,
    max_depth: int = 4,
    l2_leaf: float = 1.0,
    n_classes: int | None = None,
    min_child_weight: float = 0.0,
    max_bins: int = MAX_BINS,
) -> GbdtModel:
    X = np.asarray(X, dtype=float)
    y, k = _classes(y, n_classes)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X and y do not match")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    n, d = X.shape
    base = prior_base_score(y, k)
    n_out = 1 if k == 2 else k
    F = np.tile(base, (n, 1))
    trace = [_loss(F, y, k)]
    model = GbdtModel([], d, k, base, lr, max_depth, l2_leaf, trace)
    if np.unique(y).size < 2 or n_rounds == 0:
        return model

    binner = Binner.fit(X, max_bins)
    codes = binner.transform(X)
    Y = np.eye(k)[y] if n_out > 1 else y[:, None].astype(float)
    for _ in range(n_rounds):
        P = sigmoid(F[:, 0])[:, None] if n_out == 1 else _softmax(F)
        G = P - Y
        H = np.maximum(P * (1.0 - P), 1e-16)
        round_trees = []
        for c in range(n_out):
            t = grow_newton_tree(codes, np.ascontiguousarray(G[:, c]), np.ascontiguousarray(H[:, c]), binner, max_depth, l2_leaf, lr, min_child_weight)
            round_trees.append(t)
        for c, t in enumerate(round_trees):
            F[:, c] += t.value[t.apply(X), 0]
        model.trees.append(round_trees)
        trace.append(_loss(F, y, k))
    return model
