"""Histogram decision trees shared by the forest and the boosted ensemble.

Features are pre-binned once per fit. Candidate thresholds are midpoints
between consecutive distinct training values, so with at most ``MAX_BINS``
distinct values per column the binned search is identical to an exhaustive
one. Rows with ``x <= threshold`` go left.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import best_gini_split, best_newton_split, gini_histograms, newton_histograms

MAX_BINS = 256


@dataclass
class Binner:
    thresholds: list[np.ndarray]

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = MAX_BINS) -> "Binner":
        X = np.asarray(X, dtype=float)
        out = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if u.size <= max_bins:
                out.append(0.5 * (u[:-1] + u[1:]))
                continue
            # too many distinct values: keep midpoints at evenly spaced quantiles
            col = np.sort(X[:, j])
            picks = col[np.linspace(0, col.size - 1, max_bins + 1)[1:-1].astype(np.int64)]
            pos = np.unique(np.searchsorted(u, picks, side="left"))
            pos = pos[pos < u.size - 1]
            out.append(0.5 * (u[pos] + u[pos + 1]))
        return cls(out)

    @property
    def n_features(self) -> int:
        return len(self.thresholds)

    def n_bins(self) -> np.ndarray:
        return np.array([t.size + 1 for t in self.thresholds], dtype=np.int64)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        codes = np.empty(X.shape, dtype=np.uint8 if max(t.size for t in self.thresholds) < 256 else np.int32)
        for j, t in enumerate(self.thresholds):
            codes[:, j] = np.searchsorted(t, X[:, j], side="left")
        return codes


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, nd = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def importances(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features)
        split = self.feature >= 0
        np.add.at(out, self.feature[split], self.gain[split])
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
            np.asarray(d["gain"], dtype=float),
            np.asarray(d["n_samples"], dtype=np.int64),
        )


@dataclass
class _Builder:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    gain: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)

    def add(self, value, n) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.atleast_1d(np.asarray(value, dtype=float)))
        self.gain.append(0.0)
        self.n_samples.append(int(n))
        return len(self.feature) - 1

    def split(self, node, feature, threshold, gain, left, right):
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.gain[node] = float(gain)
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=float),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.vstack(self.value),
            np.asarray(self.gain, dtype=float),
            np.asarray(self.n_samples, dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# Gini classification tree


def grow_gini_tree(
    codes: np.ndarray,
    y: np.ndarray,
    binner: Binner,
    n_classes: int,
    max_depth: int | None = None,
    features_per_split: int | None = None,
    rng: np.random.Generator | None = None,
    min_samples_split: int = 2,
) -> Tree:
    """Greedy CART growth on binned codes; gain is the sample-weighted Gini decrease."""
    n, d = codes.shape
    codes = np.ascontiguousarray(codes)
    y = np.ascontiguousarray(y, dtype=np.int64)
    n_bins = binner.n_bins()
    B = int(n_bins.max())
    m = d if features_per_split is None else max(1, min(d, int(features_per_split)))
    all_feats = np.arange(d, dtype=np.int64)
    builder = _Builder()
    stack = [(np.arange(n), 0, builder.add(np.bincount(y, minlength=n_classes) / n, n))]
    while stack:
        idx, depth, node = stack.pop()
        if idx.size < min_samples_split or (max_depth is not None and depth >= max_depth):
            continue
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        if (counts > 0).sum() < 2:
            continue
        feats = all_feats if m == d else np.sort(rng.choice(d, size=m, replace=False))
        hist = gini_histograms(codes, idx, y, feats, B, n_classes)
        t, b, g = best_gini_split(hist, counts, n_bins[feats])
        if t < 0 or not g > 1e-12:
            continue
        f = int(feats[t])
        go_left = codes[idx, f] <= b
        li, ri = idx[go_left], idx[~go_left]
        lnode = builder.add(np.bincount(y[li], minlength=n_classes) / li.size, li.size)
        rnode = builder.add(np.bincount(y[ri], minlength=n_classes) / ri.size, ri.size)
        builder.split(node, f, binner.thresholds[f][b], g, lnode, rnode)
        stack.append((ri, depth + 1, rnode))
        stack.append((li, depth + 1, lnode))
    return builder.build()


# ---------------------------------------------------------------------------
# Newton (second-order) regression tree for boosting


def newton_gain(GL, HL, GR, HR, lam):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))


def grow_newton_tree(
    codes: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    binner: Binner,
    max_depth: int,
    l2_leaf: float,
    learning_rate: float,
    min_child_weight: float = 0.0,
) -> Tree:
    """Depth-limited tree; leaf weight -G/(H+lambda) scaled by the learning rate.

    A node splits only when the best gain is strictly positive.
    """
    n = codes.shape[0]
    n_bins = binner.n_bins()
    B = int(n_bins.max())
    builder = _Builder()
    root = np.arange(n)
    hist = newton_histograms(codes, root, g, h, B)
    G0, H0 = float(hist[0][0].sum()), float(hist[1][0].sum())
    root_node = builder.add(-G0 / (H0 + l2_leaf) * learning_rate, n)
    stack = [(root, 0, root_node, hist)]
    while stack:
        idx, depth, node, (gh, hh, ch) = stack.pop()
        if depth >= max_depth or idx.size < 2:
            continue
        j, b, best, G, H = best_newton_split(gh, hh, ch, n_bins, l2_leaf, min_child_weight)
        if j < 0 or not best > 0:
            continue
        gl = float(np.cumsum(gh[j])[b])
        hl = float(np.cumsum(hh[j])[b])
        go_left = codes[idx, j] <= b
        li, ri = idx[go_left], idx[~go_left]
        lnode = builder.add(-gl / (hl + l2_leaf) * learning_rate, li.size)
        rnode = builder.add(-(G - gl) / ((H - hl) + l2_leaf) * learning_rate, ri.size)
        builder.split(node, j, binner.thresholds[j][b], best, lnode, rnode)
        if depth + 1 >= max_depth:
            continue
        # histogram of the smaller child directly, the sibling by subtraction
        small = li if li.size <= ri.size else ri
        hs = newton_histograms(codes, small, g, h, B)
        hb = (gh - hs[0], hh - hs[1], ch - hs[2])
        hl_, hr_ = (hs, hb) if small is li else (hb, hs)
        stack.append((ri, depth + 1, rnode, hr_))
        stack.append((li, depth + 1, lnode, hl_))
    return builder.build()
