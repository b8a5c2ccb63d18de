"""k-means, agglomerative clustering, silhouette widths and choice of k."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial.distance import cdist

from .domain import ClusterAssignment, ClusterMethod, Metric

log = logging.getLogger(__name__)

MAX_ITER = 300
DEFAULT_RESTARTS = 10
_ROW_BLOCK = 1024


# ---------------------------------------------------------------------------
# distances


def distance(a, b, metric: Metric | str = Metric.EUCLIDEAN) -> float:
    """Euclidean distance or cosine distance (1 - cosine similarity).

    The cosine distance involving a zero vector is defined as 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    metric = Metric(metric)
    if metric is Metric.EUCLIDEAN:
        return float(math.sqrt(float(np.sum((a - b) ** 2))))
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - float(np.dot(a, b)) / (na * nb))


def normalize_rows(X: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows stay zero."""
    X = np.asarray(X, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    return X / np.where(norms > 0, norms, 1.0)[:, None]


def pairwise_distances(X: np.ndarray, Y: np.ndarray | None = None, metric: Metric | str = Metric.EUCLIDEAN) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = X if Y is None else np.asarray(Y, dtype=float)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    if Metric(metric) is Metric.EUCLIDEAN:
        return cdist(X, Y, "euclidean")
    Xn, Yn = normalize_rows(X), normalize_rows(Y)
    D = 1.0 - Xn @ Yn.T
    # rows that were zero vectors sit at distance 1 from everything
    np.clip(D, 0.0, 2.0, out=D)
    zx = ~Xn.any(axis=1)
    zy = ~Yn.any(axis=1)
    D[zx, :] = 1.0
    D[:, zy] = 1.0
    if Y is X:
        np.fill_diagonal(D, 0.0)
    return D


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansModel:
    centroids: np.ndarray
    metric: Metric
    inertia: float
    n_iter: int
    seed: int
    inertia_trace: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = normalize_rows(X) if self.metric is Metric.COSINE else np.asarray(X, dtype=float)
        return _assign(Z, self.centroids)[0]


def _assign(Z: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties to the lowest index) and its squared distance."""
    dist = np.empty((Z.shape[0], C.shape[0]))
    for c in range(C.shape[0]):
        diff = Z - C[c]
        dist[:, c] = np.einsum("ij,ij->i", diff, diff)
    labels = dist.argmin(axis=1)
    return labels, dist[np.arange(Z.shape[0]), labels]


def _kmeans_pp(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centers = np.empty((k, Z.shape[1]))
    first = int(rng.integers(n))
    centers[0] = Z[first]
    closest = ((Z - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = Z[idx]
        closest = np.minimum(closest, ((Z - centers[c]) ** 2).sum(axis=1))
    return centers


def _update(Z: np.ndarray, labels: np.ndarray, old: np.ndarray) -> np.ndarray:
    k, d = old.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d))
    for c in np.flatnonzero(counts):
        sums[c] = Z[labels == c].sum(axis=0)
    C = old.copy()
    filled = counts > 0
    C[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # reseed each empty centroid at the point lying farthest from its own centroid
        far = ((Z - C[labels]) ** 2).sum(axis=1)
        order = np.argsort(-far, kind="stable")
        for c, idx in zip(empty, order):
            C[c] = Z[idx]
    return C


def _lloyd(Z: np.ndarray, C: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, list[float], int]:
    labels, d2 = _assign(Z, C)
    trace = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        C = _update(Z, labels, C)
        new_labels, d2 = _assign(Z, C)
        trace.append(float(d2.sum()))
        if np.array_equal(new_labels, labels) and np.bincount(new_labels, minlength=C.shape[0]).all():
            labels = new_labels
            break
        labels = new_labels
    return C, labels, trace, n_iter


def kmeans(
    X: np.ndarray,
    k: int,
    metric: Metric | str = Metric.EUCLIDEAN,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = MAX_ITER,
) -> tuple[KMeansModel, ClusterAssignment]:
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` by inertia.

    Cosine runs Euclidean k-means on L2-normalized rows.
    """
    metric = Metric(metric)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows {n}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    Z = normalize_rows(X) if metric is Metric.COSINE else X
    if k > 1 and np.unique(Z, axis=0).shape[0] < k:
        raise ValueError(f"fewer than k={k} distinct rows")

    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        C0 = _kmeans_pp(Z, k, rng)
        C, labels, trace, n_iter = _lloyd(Z, C0, max_iter)
        if best is None or trace[-1] < best[2][-1]:
            best = (C, labels, trace, n_iter)
    C, labels, trace, n_iter = best
    model = KMeansModel(C, metric, trace[-1], n_iter, seed, trace)
    return model, ClusterAssignment(labels, k, ClusterMethod.KMEANS, metric, trace[-1])


# ---------------------------------------------------------------------------
# agglomerative clustering


LINKAGES = ("ward", "average", "complete")


@dataclass
class Dendrogram:
    """Merge list in height order.

    ``merges[i] = (node_a, node_b, height, size)``; leaves are 0..n-1 and the
    node created by merge i is n + i.
    """

    merges: np.ndarray
    linkage: str
    metric: Metric
    n: int
    violations: list[int] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations

    def cut(self, k: int) -> np.ndarray:
        return cut_tree(self, k)

    def height_at(self, k: int) -> float:
        """Height of the last merge applied when cutting at k clusters."""
        m = self.n - k
        return 0.0 if m == 0 else float(self.merges[m - 1, 2])


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return int(root)


def linkage_tree(X: np.ndarray, metric: Metric | str = Metric.EUCLIDEAN, linkage: str | None = None) -> Dendrogram:
    """Build the full dendrogram with the nearest-neighbour chain algorithm.

    Cluster distances follow the Lance-Williams recurrences; Ward works on
    squared Euclidean distances and reports heights on the distance scale.
    """
    metric = Metric(metric)
    linkage = linkage or ("ward" if metric is Metric.EUCLIDEAN else "average")
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    if linkage == "ward" and metric is not Metric.EUCLIDEAN:
        raise ValueError("ward linkage requires the euclidean metric")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if n == 1:
        return Dendrogram(np.empty((0, 4)), linkage, metric, 1)

    D = pairwise_distances(X, metric=metric)
    if linkage == "ward":
        np.square(D, out=D)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    raw = []  # (slot_a, slot_b, height)
    chain: list[int] = []
    for _ in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            row = D[a]
            b = int(np.argmin(row))
            if len(chain) > 1:
                prev = chain[-2]
                if row[prev] <= row[b]:
                    b = prev
                if b == prev:
                    break
            chain.append(b)
        b = chain.pop()
        a = chain.pop()
        h = D[a, b]
        i, j = (a, b) if a < b else (b, a)
        sa, sb = size[a], size[b]
        if linkage == "ward":
            new = ((sa + size) * D[a] + (sb + size) * D[b] - size * h) / (sa + sb + size)
        elif linkage == "average":
            new = (sa * D[a] + sb * D[b]) / (sa + sb)
        else:
            new = np.maximum(D[a], D[b])
        new[~active] = np.inf
        new[i] = np.inf
        new[j] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        active[j] = False
        size[i] = sa + sb
        raw.append((i, j, h))

    heights = np.array([r[2] for r in raw])
    if linkage == "ward":
        heights = np.sqrt(heights)
    order = np.argsort(heights, kind="stable")
    uf = _UnionFind(n)
    node_of_root = np.arange(n)
    node_size = np.ones(2 * n - 1)
    node_height = np.zeros(2 * n - 1)
    merges = np.empty((n - 1, 4))
    violations = []
    for step, idx in enumerate(order):
        i, j, _ = raw[idx]
        ri, rj = uf.find(i), uf.find(j)
        na, nb = sorted((int(node_of_root[ri]), int(node_of_root[rj])))
        node = n + step
        h = heights[idx]
        node_size[node] = node_size[na] + node_size[nb]
        node_height[node] = h
        if h < max(node_height[na], node_height[nb]):
            violations.append(step)
        merges[step] = (na, nb, h, node_size[node])
        uf.parent[rj] = ri
        node_of_root[ri] = node
    if violations:
        log.warning("dendrogram has %d height inversions", len(violations))
    return Dendrogram(merges, linkage, metric, n, violations)


def cut_tree(tree: Dendrogram, k: int) -> np.ndarray:
    """Flat labels after applying the first n-k merges; labels follow first appearance."""
    n = tree.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    uf = _UnionFind(2 * n - 1)
    for step in range(n - k):
        a, b = int(tree.merges[step, 0]), int(tree.merges[step, 1])
        node = n + step
        uf.parent[a] = node
        uf.parent[b] = node
    roots = np.array([uf.find(i) for i in range(n)])
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]


def hierarchical(
    X: np.ndarray, k: int, metric: Metric | str = Metric.EUCLIDEAN, linkage: str | None = None
) -> tuple[Dendrogram, ClusterAssignment]:
    n = np.asarray(X).shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    tree = linkage_tree(X, metric, linkage)
    labels = cut_tree(tree, k)
    return tree, ClusterAssignment(labels, k, ClusterMethod.HIERARCHICAL, tree.metric, tree.height_at(k))


# ---------------------------------------------------------------------------
# silhouette


@dataclass
class SilhouetteReport:
    widths: np.ndarray
    mean_width: float
    sample_index: np.ndarray | None = None


def silhouette_samples(X: np.ndarray, labels: np.ndarray, metric: Metric | str = Metric.EUCLIDEAN) -> np.ndarray:
    """Per-point silhouette widths.

    a(i) is the mean distance to the other members of i's cluster, b(i) the
    smallest mean distance to another cluster. Singletons and a=b=0 get 0.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    k = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k)
    if (counts > 0).sum() < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    nonempty = counts > 0
    widths = np.empty(n)
    for start in range(0, n, _ROW_BLOCK):
        rows = slice(start, min(n, start + _ROW_BLOCK))
        D = pairwise_distances(X[rows], X, metric)
        r = np.arange(D.shape[0])
        self_d = D[r, r + start]
        D = D[:, order]
        sums = np.zeros((D.shape[0], k))
        sums[:, nonempty] = np.add.reduceat(D, starts[nonempty], axis=1)
        own = labels[rows]
        sums[r, own] -= self_d
        own_n = counts[own]
        a = np.where(own_n > 1, sums[r, own] / np.maximum(own_n - 1, 1), 0.0)
        means = np.where(nonempty, sums / np.maximum(counts, 1), np.inf)
        means[r, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        s[own_n == 1] = 0.0
        widths[rows] = s
    return widths


def silhouette(
    X: np.ndarray,
    a: ClusterAssignment,
    metric: Metric | str | None = None,
    sample_size: int | None = None,
    seed: int = 0,
) -> SilhouetteReport:
    """Silhouette report for an assignment; optionally on a seeded row subsample."""
    metric = Metric(metric) if metric is not None else a.metric
    if a.k < 2:
        raise ValueError("silhouette is undefined for a single cluster")
    X = np.asarray(X, dtype=float)
    labels = a.labels
    index = None
    if sample_size is not None and X.shape[0] > sample_size:
        rng = np.random.default_rng(seed)
        index = np.sort(rng.choice(X.shape[0], size=sample_size, replace=False))
        X, labels = X[index], labels[index]
        if np.unique(labels).size < 2:
            raise ValueError("subsample contains a single cluster")
    w = silhouette_samples(X, labels, metric)
    return SilhouetteReport(w, float(w.mean()), index)


def select_k(
    X: np.ndarray,
    method: ClusterMethod | str = ClusterMethod.KMEANS,
    metric: Metric | str = Metric.EUCLIDEAN,
    k_range: Iterable[int] = range(2, 11),
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    linkage: str | None = None,
    sample_size: int | None = None,
) -> tuple[int, dict[int, float]]:
    """Pick k by maximum mean silhouette width (ties go to the smaller k)."""
    method, metric = ClusterMethod(method), Metric(metric)
    X = np.asarray(X, dtype=float)
    ks = sorted(set(int(k) for k in k_range))
    n = X.shape[0]
    if not ks or ks[0] < 2 or ks[-1] > n - 1:
        raise ValueError(f"k_range must lie within [2, {n - 1}]")
    tree = linkage_tree(X, metric, linkage) if method is ClusterMethod.HIERARCHICAL else None
    profile: dict[int, float] = {}
    for k in ks:
        if tree is not None:
            a = ClusterAssignment(cut_tree(tree, k), k, method, metric, tree.height_at(k))
        else:
            _, a = kmeans(X, k, metric, seed=seed, restarts=restarts)
        profile[k] = silhouette(X, a, metric, sample_size=sample_size, seed=seed).mean_width
        log.debug("k=%d mean silhouette %.4f", k, profile[k])
    best = ks[0]
    for k in ks[1:]:
        if profile[k] > profile[best]:
            best = k
    return best, profile
