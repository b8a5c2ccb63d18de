"""Splits, evaluation metrics and importance ranking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..stats import rankdata


class Split(NamedTuple):
    train: np.ndarray
    test: np.ndarray


def train_test_split(X, y, ratio: float = 0.8, seed: int = 0, stratified: bool = True) -> Split:
    """Row indices for a shuffled split; per class ``round(ratio * n_c)`` go to train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    y = np.asarray(y)
    n = len(X) if X is not None else y.size
    if y.size != n:
        raise ValueError("X and y differ in length")
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n)
        cut = int(round(ratio * n))
        return Split(np.sort(perm[:cut]), np.sort(perm[cut:]))
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("stratified split needs at least two classes")
    train, test = [], []
    for c in classes:
        rows = np.flatnonzero(y == c)
        rows = rows[rng.permutation(rows.size)]
        cut = int(round(ratio * rows.size))
        train.append(rows[:cut])
        test.append(rows[cut:])
    return Split(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)))


def predict_proba(model, X) -> np.ndarray:
    return model.predict_proba(X)


def predict(model, X) -> np.ndarray:
    return np.argmax(model.predict_proba(X), axis=1)


def f_score(y_true, y_pred, positive: int = 1) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(np.sum((y_pred == positive) & (y_true == positive)))
    fp = int(np.sum((y_pred == positive) & (y_true != positive)))
    fn = int(np.sum((y_pred != positive) & (y_true == positive)))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def macro_f_score(y_true, y_pred, classes: Sequence[int] | None = None) -> float:
    classes = np.unique(np.asarray(y_true)) if classes is None else classes
    return float(np.mean([f_score(y_true, y_pred, c) for c in classes]))


def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def auroc(y_true, scores) -> float:
    """P(score of random positive > score of random negative), ties counted 1/2."""
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=float)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes")
    r = rankdata(s)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def feature_importance(model) -> np.ndarray:
    return np.asarray(model.feature_importance(), dtype=float)


@dataclass
class ImportanceRanking:
    feature_ids: list[str]
    scores: np.ndarray  # (n_models, d)
    ranks: np.ndarray  # (n_models, d); d = most important
    mean_rank: np.ndarray
    model_names: list[str]

    def top(self, n: int) -> list[str]:
        order = np.argsort(-self.mean_rank, kind="stable")
        return [self.feature_ids[i] for i in order[:n]]

    def position(self, feature: str) -> int:
        """1-based position of a feature when sorted by mean rank, ties resolved pessimistically."""
        j = self.feature_ids.index(feature)
        return int(np.sum(self.mean_rank >= self.mean_rank[j]))


def ensemble_rank(importances: Sequence, feature_ids: Sequence[str] | None = None,
                  model_names: Sequence[str] | None = None) -> ImportanceRanking:
    scores = np.vstack([np.asarray(s, dtype=float) for s in importances])
    d = scores.shape[1]
    ranks = np.vstack([rankdata(row) for row in scores])
    ids = list(feature_ids) if feature_ids is not None else [str(i) for i in range(d)]
    if len(ids) != d:
        raise ValueError("feature ids do not match score length")
    names = list(model_names) if model_names is not None else [f"model{i}" for i in range(len(scores))]
    return ImportanceRanking(ids, scores, ranks, ranks.mean(axis=0), names)
