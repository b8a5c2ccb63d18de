"""Agreement between clusterings and subgroup comparison statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np

from .domain import ClusterAssignment

P_FLOOR = 1e-300
EXACT_MAX_N = 12


def _labels(x) -> np.ndarray:
    if isinstance(x, ClusterAssignment):
        return x.labels
    return np.asarray(x, dtype=np.int64)


def confusion_matrix(a, b, k: int | None = None) -> np.ndarray:
    """counts[i, j] = number of rows with a-label i and b-label j."""
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    if k is None:
        k = int(max(a.max(initial=-1), b.max(initial=-1))) + 1
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (a, b), 1)
    return out


# ---------------------------------------------------------------------------
# label alignment


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix; returns col index per row."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    return assignment


def _max_assignment_value(weights: np.ndarray) -> float:
    if weights.size == 0:
        return 0.0
    cols = _hungarian_min(weights.max() - weights)
    return float(weights[np.arange(weights.shape[0]), cols].sum())


def align_labels(a, b, k: int | None = None) -> np.ndarray:
    """Relabelling of ``b`` that maximizes agreement with ``a``.

    Returns ``perm`` with ``perm[j]`` the a-label assigned to b-label j, so
    ``perm[b]`` is the aligned vector. Among optimal permutations the
    lexicographically smallest ``perm`` is returned.
    """
    if isinstance(a, ClusterAssignment) and isinstance(b, ClusterAssignment):
        if a.k != b.k:
            raise ValueError(f"assignments have different k ({a.k} vs {b.k})")
        k = a.k
    la, lb = _labels(a), _labels(b)
    if k is None:
        ka = int(la.max(initial=-1)) + 1
        kb = int(lb.max(initial=-1)) + 1
        if ka != kb:
            raise ValueError(f"assignments have different k ({ka} vs {kb})")
        k = ka
    # weights[j, i]: rows with b-label j and a-label i
    weights = confusion_matrix(la, lb, k).T.astype(float)
    best = _max_assignment_value(weights)
    perm = np.empty(k, dtype=np.int64)
    free = list(range(k))
    fixed = 0.0
    for j in range(k):
        rest_rows = np.arange(j + 1, k)
        for i in free:
            rest_cols = [c for c in free if c != i]
            value = fixed + weights[j, i] + _max_assignment_value(weights[np.ix_(rest_rows, rest_cols)])
            if value == best:
                perm[j] = i
                fixed += weights[j, i]
                free.remove(i)
                break
        else:  # pragma: no cover - exact integer arithmetic makes this unreachable
            raise RuntimeError("alignment search failed")
    return perm


def apply_alignment(b, perm: np.ndarray) -> np.ndarray:
    return np.asarray(perm)[_labels(b)]


def cohen_kappa(a, b) -> float:
    """Cohen's kappa between two label vectors over the union of their labels."""
    a, b = _labels(a), _labels(b)
    if a.size == 0:
        raise ValueError("empty input")
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    cats, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ia, ib = inv[: a.size], inv[a.size :]
    n = a.size
    p_o = float(np.mean(ia == ib))
    pa = np.bincount(ia, minlength=cats.size) / n
    pb = np.bincount(ib, minlength=cats.size) / n
    p_e = float(np.dot(pa, pb))
    if p_e >= 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def agreement_matrix(a, b_aligned, k: int | None = None) -> np.ndarray:
    """Row-normalized confusion: entry (i, j) = share of a-cluster i given b-label j."""
    counts = confusion_matrix(a, b_aligned, k).astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


@dataclass
class AgreementReport:
    confusion: np.ndarray
    alignment: np.ndarray
    kappa: float
    row_percent: np.ndarray


def compare_assignments(a: ClusterAssignment, b: ClusterAssignment) -> AgreementReport:
    perm = align_labels(a, b)
    aligned = apply_alignment(b, perm)
    return AgreementReport(
        confusion=confusion_matrix(a.labels, aligned, a.k),
        alignment=perm,
        kappa=cohen_kappa(a.labels, aligned),
        row_percent=agreement_matrix(a.labels, aligned, a.k),
    )


def adjusted_rand_index(a, b) -> float:
    a, b = _labels(a), _labels(b)
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        x = np.asarray(x, dtype=float)
        return float((x * (x - 1) / 2).sum())

    n = a.size
    index = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


# ---------------------------------------------------------------------------
# rank tests


def rankdata(x) -> np.ndarray:
    """Ranks starting at 1 with ties given their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    boundaries = np.concatenate([[True], sorted_x[1:] != sorted_x[:-1], [True]])
    starts = np.flatnonzero(boundaries)
    group = np.cumsum(boundaries[:-1]) - 1
    avg = 0.5 * (starts[:-1] + starts[1:] - 1) + 1.0
    ranks = np.empty(x.size)
    ranks[order] = avg[group]
    return ranks


def _tie_term(x: np.ndarray) -> float:
    _, counts = np.unique(x, return_counts=True)
    counts = counts.astype(float)
    return float((counts**3 - counts).sum())


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _mwu_normal_p(u1: float, n1: int, n2: int, tie_term: float) -> float:
    n = n1 + n2
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = max(abs(u1 - mu) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, 2.0 * _normal_sf(z))


def _mwu_exact_p(ranks: np.ndarray, n1: int) -> float:
    n = ranks.size
    mu = n1 * (n - n1) / 2.0
    offset = n1 * (n1 + 1) / 2.0
    observed = abs(ranks[:n1].sum() - offset - mu)
    hits = 0
    total = 0
    for combo in combinations(range(n), n1):
        total += 1
        if abs(ranks[list(combo)].sum() - offset - mu) >= observed - 1e-9:
            hits += 1
    return hits / total


def rank_test(x: Sequence[float], y: Sequence[float], method: str = "auto") -> float:
    """Two-sided Mann-Whitney rank-sum p-value.

    ``method="auto"`` enumerates the exact permutation distribution when the
    pooled size is at most 12 and otherwise uses the normal approximation with
    tie and continuity corrections.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 1 or y.size < 1:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    if np.all(pooled == pooled[0]):
        return 1.0
    ranks = rankdata(pooled)
    n1, n2 = x.size, y.size
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    if method == "exact" or (method == "auto" and n1 + n2 <= EXACT_MAX_N):
        return _mwu_exact_p(ranks, n1)
    u1 = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return _mwu_normal_p(u1, n1, n2, _tie_term(pooled))


# ---------------------------------------------------------------------------
# chi-square


def _gamma_series(a: float, x: float) -> float:
    # regularized lower incomplete gamma P(a, x) by its power series
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    # regularized upper incomplete gamma Q(a, x) by modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_continued_fraction(a, x)


def chi2_sf(statistic: float, df: int) -> float:
    return gammaincc(df / 2.0, statistic / 2.0)


class ChiSquareResult(NamedTuple):
    statistic: float
    df: int
    p_value: float


def chi_square(table) -> ChiSquareResult:
    """Pearson chi-square test of independence (no continuity correction)."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise ValueError("need an r x c table with r, c >= 2")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if (rows == 0).any() or (cols == 0).any():
        raise ValueError("table has a zero marginal")
    expected = np.outer(rows, cols) / obs.sum()
    stat = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return ChiSquareResult(stat, df, chi2_sf(stat, df))


# ---------------------------------------------------------------------------
# heterogeneity across subgroups


@dataclass
class HeterogeneityRow:
    feature: str
    subgroup_means: np.ndarray
    std_of_means: float
    avg_neglog10_p: float
    highlighted: bool = False


def one_vs_rest_pvalues(values: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Rank-sum p-value of each subgroup against all other rows."""
    values = np.asarray(values, dtype=float)
    n = values.size
    out = np.ones(k)
    if n <= EXACT_MAX_N:
        for c in range(k):
            inside = labels == c
            if inside.any() and (~inside).any():
                out[c] = rank_test(values[inside], values[~inside])
        return out
    if np.all(values == values[0]):
        return out
    ranks = rankdata(values)
    ties = _tie_term(values)
    for c in range(k):
        inside = labels == c
        n1 = int(inside.sum())
        if n1 == 0 or n1 == n:
            continue
        u1 = ranks[inside].sum() - n1 * (n1 + 1) / 2.0
        out[c] = _mwu_normal_p(u1, n1, n - n1, ties)
    return out


def highlight_rule(std_of_means: np.ndarray, avg_neglog10_p: np.ndarray) -> np.ndarray:
    """True where both measures exceed their own median."""
    s = np.asarray(std_of_means, dtype=float)
    p = np.asarray(avg_neglog10_p, dtype=float)
    return (s > np.median(s)) & (p > np.median(p))


def heterogeneity_summary(
    X_std: np.ndarray, assignment: ClusterAssignment | np.ndarray, feature_ids: Sequence[str]
) -> list[HeterogeneityRow]:
    X = np.asarray(X_std, dtype=float)
    labels = _labels(assignment)
    k = assignment.k if isinstance(assignment, ClusterAssignment) else int(labels.max()) + 1
    if k < 2:
        raise ValueError("need at least two subgroups")
    if X.shape[1] != len(feature_ids):
        raise ValueError("feature_ids do not match the matrix")
    rows = []
    for j, fid in enumerate(feature_ids):
        col = X[:, j]
        means = np.array([col[labels == c].mean() for c in range(k)])
        p = np.maximum(one_vs_rest_pvalues(col, labels, k), P_FLOOR)
        rows.append(HeterogeneityRow(fid, means, float(means.std()), float(np.mean(-np.log10(p)))))
    flags = highlight_rule([r.std_of_means for r in rows], [r.avg_neglog10_p for r in rows])
    for r, f in zip(rows, flags):
        r.highlighted = bool(f)
    return rows
