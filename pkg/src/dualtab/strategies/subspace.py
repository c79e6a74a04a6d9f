from __future__ import annotations

import math

import numpy as np

from ..classical import pca_fit, pca_transform
from ..errors import ContractError, DualtabError
from ..numerics import RngStream, derive_seed
from .aggregate import aggregate


def subspace_partition(d: int, budget: int, seed: int) -> list[np.ndarray]:
    """Random partition of ``range(d)`` into ``ceil(d / budget)`` chunks of size <= budget."""
    if d < 1 or budget < 1:
        raise ContractError("need d >= 1 and a positive feature budget")
    m = math.ceil(d / budget)
    order = RngStream(seed, "subspace").generator().permutation(d)
    return [np.sort(c) for c in np.array_split(order, m)]


class MemberError(DualtabError):
    def __init__(self, member: int, cause: Exception):
        super().__init__(f"member {member}: {cause}")
        self.member = member
        self.cause = cause


def _run_member(i, base, *args):
    try:
        return base(*args)
    except DualtabError as exc:
        raise MemberError(i, exc) from exc


def subspace_ensemble_predict(train_X, train_y, test_X, budget: int, seed: int, base, task="classification", n_classes=0):
    """Each member sees a disjoint random block of at most ``budget`` features."""
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    d = train_X.shape[1]
    if d <= budget:
        out = base(train_X, train_y, test_X, task, n_classes, seed)
        out.strategy = "subspace"
        out.meta["subsets"] = [list(range(d))]
        return out
    subsets = subspace_partition(d, budget, seed)
    members = [
        _run_member(i, base, train_X[:, cols], train_y, test_X[:, cols], task, n_classes, derive_seed(seed, "member", i))
        for i, cols in enumerate(subsets)
    ]
    out = aggregate(members, task, "subspace", seed)
    out.meta["subsets"] = [c.tolist() for c in subsets]
    return out


def pca_bagging_predict(train_X, train_y, test_X, target_dim: int, bags: int, seed: int, base,
                        task="classification", n_classes=0, bootstrap: bool = True):
    """Per bag: bootstrap the training rows, fit PCA on them, project both sets, predict."""
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    if target_dim > train_X.shape[1]:
        raise ContractError(f"target dimension {target_dim} exceeds {train_X.shape[1]} features")
    train_y = np.asarray(train_y)
    members = []
    for b in range(bags):
        mseed = derive_seed(seed, "member", b)
        rows = np.arange(len(train_X))
        if bootstrap:
            rows = RngStream(mseed, "bootstrap").generator().integers(0, len(train_X), len(train_X))
        pca = pca_fit(train_X[rows], target_dim, seed=mseed)
        members.append(_run_member(
            b, base, pca_transform(pca, train_X[rows]), train_y[rows], pca_transform(pca, test_X), task, n_classes, mseed,
        ))
    return aggregate(members, task, "pca-bag", seed)
