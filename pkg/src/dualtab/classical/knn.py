from __future__ import annotations

import numpy as np

from ..errors import ContractError


def knn_predict(train_X, train_y, X, K: int = 5, task: str = "classification", n_classes: int | None = None):
    """Euclidean K-nearest-neighbour prediction for each row of ``X``.

    Neighbour ties are broken by training index; classification vote ties go
    to the lowest label.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    train_y = np.asarray(train_y)
    if not 1 <= K <= len(train_X):
        raise ContractError(f"K={K} must lie in [1, {len(train_X)}]")
    out = []
    for start in range(0, len(X), 1024):
        chunk = X[start:start + 1024]
        d = ((chunk[:, None, :] - train_X[None, :, :]) ** 2).sum(-1)
        idx = np.argsort(d, axis=1, kind="stable")[:, :K]
        neigh = train_y[idx]
        if task == "classification":
            C = n_classes or int(train_y.max()) + 1
            counts = np.zeros((len(chunk), C))
            for j in range(K):
                counts[np.arange(len(chunk)), neigh[:, j].astype(int)] += 1
            out.append(np.argmax(counts, axis=1))
        else:
            out.append(neigh.astype(np.float64).mean(axis=1))
    return np.concatenate(out) if out else np.zeros(0)
