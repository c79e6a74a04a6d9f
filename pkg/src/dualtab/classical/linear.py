from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError


@dataclass
class LinearModel:
    weights: np.ndarray  # (d, C) logistic, (d,) ridge
    bias: np.ndarray | float
    kind: str
    losses: list | None = None

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        if self.kind != "multinomial-logistic":
            raise ContractError("probabilities are only defined for the logistic model")
        z = self.decision(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        if self.kind == "multinomial-logistic":
            return np.argmax(self.decision(X), axis=1)
        return self.decision(X)


def _logistic_loss(X, Y, W, b, l2):
    z = X @ W + b
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(Y * logp).sum(1).mean() + 0.5 * l2 * (W**2).sum()), np.exp(logp)


def logistic_fit(X, y, n_classes: int | None = None, l2: float = 1e-4, epochs: int = 500, lr: float = 0.5) -> LinearModel:
    """Full-batch gradient descent on L2-regularized softmax cross-entropy.

    A step that would raise the loss is retried with half the learning rate,
    so the recorded loss trace is non-increasing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    C = n_classes or int(y.max()) + 1
    n, d = X.shape
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((d, C))
    b = np.zeros(C)
    loss, P = _logistic_loss(X, Y, W, b, l2)
    losses = [loss]
    for _ in range(epochs):
        G = (P - Y) / n
        gW = X.T @ G + l2 * W
        gb = G.sum(0)
        while lr > 1e-12:
            W2, b2 = W - lr * gW, b - lr * gb
            new_loss, P2 = _logistic_loss(X, Y, W2, b2, l2)
            if new_loss <= loss:
                break
            lr *= 0.5
        else:
            break
        W, b, loss, P = W2, b2, new_loss, P2
        losses.append(loss)
    if not np.isfinite(W).all():
        raise NumericError("logistic regression diverged")
    return LinearModel(W, b, "multinomial-logistic", losses)


def linear_fit(X, y, ridge: float = 1e-3) -> LinearModel:
    """Closed-form ridge regression; the bias is not penalized."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = X.mean(0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    try:
        if ridge == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
            raise np.linalg.LinAlgError
        w = np.linalg.solve(A, Xc.T @ (y - ym))
    except np.linalg.LinAlgError:
        raise NumericError("singular normal equations; use a ridge penalty > 0") from None
    return LinearModel(w, float(ym - xm @ w), "ridge-linear")
