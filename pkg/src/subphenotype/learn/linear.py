"""L2-regularized logistic regression fitted by backtracking gradient descent."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAD_TOL = 1e-6


def _check(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError("y does not match X")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("logistic regression needs binary 0/1 labels")
    return X, y.astype(float)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w, b, X, y, l2) -> float:
    """mean log-loss + l2 / (2n) * ||w||^2 (the bias is not penalized)."""
    z = X @ w + b
    n = X.shape[0]
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 / n * np.dot(w, w))


def logistic_gradient(w, b, X, y, l2) -> tuple[np.ndarray, float]:
    n = X.shape[0]
    r = sigmoid(X @ w + b) - y
    return X.T @ r / n + l2 / n * w, float(r.mean())


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float = 0.0
    l2: float = 1.0
    n_iter: int = 0
    final_loss: float = float("nan")
    loss_trace: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def decision_function(self, X) -> np.ndarray:
        X = _check(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def feature_importance(self) -> np.ndarray:
        return np.abs(self.weights)

    def to_dict(self) -> dict:
        return {"kind": "logistic", "weights": self.weights.tolist(), "bias": self.bias, "l2": self.l2,
                "n_iter": self.n_iter, "final_loss": self.final_loss}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), float(d["l2"]),
                   int(d["n_iter"]), float(d["final_loss"]))


def train_logreg(X, y, l2: float = 1.0, max_iter: int = 500) -> LogisticModel:
    """Gradient descent with Armijo backtracking from w = 0, b = 0.

    Stops once the gradient's infinity norm is at most 1e-6 or after
    ``max_iter`` accepted steps. Every accepted step lowers the loss.
    """
    X, y = _check(X, y)
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    w = np.zeros(X.shape[1])
    b = 0.0
    loss = logistic_loss(w, b, X, y, l2)
    trace = [loss]
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        gw, gb = logistic_gradient(w, b, X, y, l2)
        gnorm2 = float(np.dot(gw, gw) + gb * gb)
        if max(np.abs(gw).max(initial=0.0), abs(gb)) <= GRAD_TOL:
            it -= 1
            break
        step *= 2.0
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss = logistic_loss(w_new, b_new, X, y, l2)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            it -= 1
            break
        w, b, loss = w_new, b_new, new_loss
        trace.append(loss)
    return LogisticModel(w, float(b), float(l2), it, loss, trace)
