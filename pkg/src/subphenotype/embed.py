"""Exact t-SNE for 2-D cluster visualization.

Affinities use a Gaussian kernel calibrated per point to a target perplexity;
the embedding minimizes KL(P || Q) with a Student-t (1 dof) kernel using
momentum, early exaggeration and per-parameter adaptive gains.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .cluster import pairwise_distances
from .domain import Metric

log = logging.getLogger(__name__)

ENTROPY_TOL = 1e-5  # bits
MAX_BISECTIONS = 50
_MACHINE_TINY = np.finfo(float).tiny


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0
    metric: Metric = Metric.EUCLIDEAN
    min_gain: float = 0.01
    kl_every: int = 50

    def __post_init__(self):
        self.metric = Metric(self.metric)
        if self.iterations < 250:
            raise ValueError("iterations must be >= 250")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")


@dataclass
class SigmaCalibration:
    sigma: float
    probabilities: np.ndarray
    entropy_bits: float
    saturated: bool


def _row_distribution(d2_unit: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    # shift by the smallest squared distance so the largest weight is exp(0)
    logits = -(d2_unit - d2_unit.min()) / (2.0 * s * s)
    w = np.exp(logits)
    total = w.sum()
    p = w / total
    nz = p > 0
    h = float(-(p[nz] * np.log2(p[nz])).sum())
    return p, h


def calibrate_sigma(distances_row, target_perplexity: float) -> SigmaCalibration:
    """Bisect the Gaussian bandwidth until the row perplexity hits the target.

    Works on distances divided by their maximum, so scaling the row scales the
    returned sigma by exactly the same factor. A row whose distances are all
    equal has perplexity n-1 for every sigma; it is returned with the bracket
    midpoint and ``saturated=True``.
    """
    d = np.asarray(distances_row, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("expected a non-empty 1-D distance row")
    if not np.isfinite(d).all():
        raise ValueError("distances must be finite")
    if target_perplexity <= 0:
        raise ValueError("target perplexity must be positive")
    scale = float(d.max())
    target = float(np.log2(target_perplexity))
    lo, hi = 0.0, 1.0
    if scale <= 0 or float(d.min()) == scale:
        s = 0.5 * (lo + hi)
        p = np.full(d.size, 1.0 / d.size)
        return SigmaCalibration(s * scale if scale > 0 else s, p, float(np.log2(d.size)), True)
    d2 = (d / scale) ** 2

    p, h = _row_distribution(d2, hi)
    expansions = 0
    while h < target - ENTROPY_TOL and expansions < 60:
        lo, hi = hi, 2.0 * hi
        p, h = _row_distribution(d2, hi)
        expansions += 1
    if h < target - ENTROPY_TOL:
        # cannot reach the target even with a near-uniform kernel
        return SigmaCalibration(hi * scale, p, h, True)

    s = hi
    for _ in range(MAX_BISECTIONS):
        s = 0.5 * (lo + hi)
        p, h = _row_distribution(d2, s)
        if abs(h - target) <= ENTROPY_TOL:
            break
        if h > target:
            hi = s
        else:
            lo = s
    saturated = abs(h - target) > ENTROPY_TOL
    return SigmaCalibration(s * scale, p, h, saturated)


def joint_probabilities(
    X: np.ndarray, perplexity: float, metric: Metric | str = Metric.EUCLIDEAN
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetrized affinities p_ij = (p_j|i + p_i|j) / 2n.

    Returns (P, per-row entropy in bits, per-row saturation flags).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    D = pairwise_distances(X, metric=metric)
    cond = np.zeros((n, n))
    entropy = np.empty(n)
    saturated = np.zeros(n, dtype=bool)
    others = ~np.eye(n, dtype=bool)
    for i in range(n):
        cal = calibrate_sigma(D[i, others[i]], perplexity)
        cond[i, others[i]] = cal.probabilities
        entropy[i] = cal.entropy_bits
        saturated[i] = cal.saturated
    if saturated.any():
        log.info("%d of %d affinity rows saturated during calibration", int(saturated.sum()), n)
    P = (cond + cond.T) / (2.0 * n)
    return P, entropy, saturated


def _student_t(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sq = np.einsum("ij,ij->i", Y, Y)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T), 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    return num, Q


@njit(cache=True)
def _kl_gradient(Y, P, exaggeration):
    """Exact gradient of KL(exaggeration * P || Q) without n x n temporaries."""
    n = Y.shape[0]
    Z = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            Z += 2.0 / (1.0 + dx * dx + dy * dy)
    grad = np.zeros((n, 2))
    for i in range(n):
        for j in range(i + 1, n):
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            num = 1.0 / (1.0 + dx * dx + dy * dy)
            w = (exaggeration * P[i, j] - num / Z) * num
            grad[i, 0] += w * dx
            grad[i, 1] += w * dy
            grad[j, 0] -= w * dx
            grad[j, 1] -= w * dy
    return 4.0 * grad


def kl_gradient(P: np.ndarray, Y: np.ndarray, exaggeration: float = 1.0) -> np.ndarray:
    return _kl_gradient(np.ascontiguousarray(Y, dtype=float), np.ascontiguousarray(P, dtype=float), float(exaggeration))


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    """KL(P || Q) for an embedding Y."""
    _, Q = _student_t(np.asarray(Y, dtype=float))
    nz = P > 0
    return float((P[nz] * np.log(P[nz] / np.maximum(Q[nz], _MACHINE_TINY))).sum())


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_trace: dict[int, float] = field(default_factory=dict)
    P: np.ndarray | None = None
    row_entropy: np.ndarray | None = None
    saturated: np.ndarray | None = None

    @property
    def final_kl(self) -> float:
        return self.kl_trace[max(self.kl_trace)]


def tsne(X: np.ndarray, cfg: TsneConfig | None = None) -> TsneResult:
    cfg = cfg or TsneConfig()
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 10:
        raise ValueError("t-SNE needs at least 10 rows")
    if cfg.perplexity >= n / 3:
        raise ValueError(f"perplexity {cfg.perplexity} must be < n/3 = {n / 3:.2f}")

    P, entropy, saturated = joint_probabilities(X, cfg.perplexity, cfg.metric)
    P = np.ascontiguousarray(np.maximum(P, 0.0))
    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(scale=1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace: dict[int, float] = {}
    for it in range(cfg.iterations):
        early = it < cfg.exaggeration_iters
        grad = _kl_gradient(Y, P, cfg.exaggeration if early else 1.0)

        momentum = cfg.momentum_early if early else cfg.momentum_late
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

        step = it + 1
        if step == cfg.exaggeration_iters or step % cfg.kl_every == 0 or step == cfg.iterations:
            trace[step] = kl_divergence(P, Y)
    Y = Y - Y.mean(axis=0)
    return TsneResult(Y, trace, P, entropy, saturated)
