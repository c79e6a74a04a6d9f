from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..numerics import RngStream


@dataclass
class PcaModel:
    components: np.ndarray  # (q, d), orthonormal rows
    mean: np.ndarray
    variances: np.ndarray  # descending

    def transform(self, X) -> np.ndarray:
        return pca_transform(self, X)


def _orthonormalize(M: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt on columns; columns that vanish are left at zero."""
    Q = np.array(M, dtype=np.float64)
    for j in range(Q.shape[1]):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        nrm = np.linalg.norm(Q[:, j])
        Q[:, j] = Q[:, j] / nrm if nrm > 1e-12 else 0.0
    return Q


def _complete_basis(Q: np.ndarray) -> np.ndarray:
    """Replace zero columns with unit vectors orthogonal to the rest."""
    d, q = Q.shape
    for j in range(q):
        if np.linalg.norm(Q[:, j]) > 0.5:
            continue
        for e in range(d):
            cand = np.zeros(d)
            cand[e] = 1.0
            for i in range(q):
                if i != j:
                    cand -= (Q[:, i] @ cand) * Q[:, i]
            nrm = np.linalg.norm(cand)
            if nrm > 1e-6:
                Q[:, j] = cand / nrm
                break
    return Q


def pca_fit(X, q: int, iterations: int = 200, seed: int = 0) -> PcaModel:
    """Top-``q`` components by orthogonalized (block) power iteration on the covariance."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if q > d or q < 1:
        raise ContractError(f"cannot extract {q} components from {d} features")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(1, n - 1) if n > 1 else np.zeros((d, d))
    Q = _orthonormalize(RngStream(seed, "pca").generator().standard_normal((d, q)))
    for _ in range(iterations):
        Q = _orthonormalize(cov @ Q)
    Q = _complete_basis(Q)
    # Rayleigh-Ritz so the returned basis diagonalizes the projected covariance
    small = Q.T @ cov @ Q
    vals, vecs = np.linalg.eigh((small + small.T) / 2)
    order = np.argsort(-vals, kind="stable")
    Q = Q @ vecs[:, order]
    variances = np.clip(vals[order], 0.0, None)
    comps = Q.T
    # canonical sign: largest-magnitude loading positive
    for i in range(q):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaModel(comps, mean, variances)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - model.mean) @ model.components.T
