from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..numerics import RngStream


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X**2).sum(1)[:, None] - 2 * X @ C.T + (C**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def sse(X, centers, assign) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(((X - np.asarray(centers)[assign]) ** 2).sum())


def kmeans(X, k: int, seed: int = 0, max_iters: int = 100, history: list | None = None):
    """Lloyd iterations from a seeded farthest-point start.

    Returns ``(centers, assignments)``.  Empty clusters are reseeded with the
    point farthest from its current center.  If ``history`` is a list, the SSE
    after every assignment step is appended to it.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k={k} must lie in [1, {n}]")
    gen = RngStream(seed, "kmeans").generator()
    chosen = [int(gen.integers(n))]
    nearest = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        nearest[chosen] = -1.0
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, _sq_dists(X, X[[nxt]])[:, 0])
    centers = X[chosen].copy()
    assign = np.full(n, -1)
    for _ in range(max_iters):
        dist = _sq_dists(X, centers)
        new = np.argmin(dist, axis=1)
        if history is not None:
            history.append(sse(X, centers, new))
        if np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(((X - centers[assign]) ** 2).sum(1)))
                centers[c] = X[far]
                assign[far] = c
    return centers, assign
