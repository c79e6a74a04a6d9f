"""Support-size reduction for training sets larger than the context budget."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..classical import cart_fit, kmeans, logistic_fit
from ..classical.cart import cart_route_all
from ..errors import ContractError
from ..numerics import RngStream, derive_seed
from ..predictors import PredictionSet
from .aggregate import aggregate

FULL_SCALE_CAP = 10_000
DESK_CAP = 512
VARIANTS = ("b", "k", "dt", "df", "sq")


@dataclass
class LargeScalePlan:
    variant: str = "b"
    cap: int = DESK_CAP
    repetitions: int = 4
    forest_size: int = 32
    forest_fraction: float = 0.6
    kmeans_iters: int = 20

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown large-scale variant {self.variant!r}")
        if self.cap < 1 or self.repetitions < 1 or self.forest_size < 1:
            raise ContractError("cap, repetitions and forest size must be positive")
        if not 0 < self.forest_fraction <= 1:
            raise ContractError("forest fraction must lie in (0, 1]")


def _subsample(n: int, size: int, seed: int) -> np.ndarray:
    return np.sort(RngStream(seed, "subsample").generator().choice(n, size=size, replace=False))


def kmeans_support(train_X, cap: int, seed: int, iters: int = 20) -> np.ndarray:
    """Indices of the training rows nearest to each of ``cap`` KMeans centers (deduplicated)."""
    X = np.asarray(train_X, dtype=np.float64)
    centers, _ = kmeans(X, cap, seed, iters)
    picked = []
    for c in centers:
        picked.append(int(np.argmin(((X - c) ** 2).sum(1))))
    return np.array(sorted(set(picked)), dtype=np.int64)


def tree_partition_predict(train_X, train_y, test_X, cap: int, seed: int, base, task, n_classes):
    """One CART with ``min_samples_split = cap``; every leaf's rows form a support set."""
    tree = cart_fit(train_X, train_y, cap, task, n_classes or None)
    train_leaf = cart_route_all(tree, train_X)
    test_leaf = cart_route_all(tree, test_X)
    n = len(test_X)
    labels = np.zeros(n, dtype=np.int64)
    values = np.zeros(n)
    probs = np.zeros((n, n_classes)) if task == "classification" else None
    sizes = {}
    for leaf in np.unique(test_leaf):
        q = np.nonzero(test_leaf == leaf)[0]
        rows = np.nonzero(train_leaf == leaf)[0]
        if len(rows) > cap:
            rows = rows[_subsample(len(rows), cap, derive_seed(seed, "leaf", int(leaf)))]
        sizes[int(leaf)] = len(rows)
        out = base(train_X[rows], train_y[rows], test_X[q], task, n_classes, derive_seed(seed, "leaf", int(leaf)))
        if task == "classification":
            labels[q] = out.labels
            if out.probs is not None:
                probs[q, : out.probs.shape[1]] = out.probs
        else:
            values[q] = out.values
    if task == "classification":
        return PredictionSet("classification", labels=labels, probs=probs, strategy="dt", seed=seed, meta={"leaf_support": sizes})
    return PredictionSet("regression", values=values, strategy="dt", seed=seed, meta={"leaf_support": sizes})


def sample_and_probe(train_X, train_y, test_X, cap: int, seed: int, embedder, n_classes: int, prober=None) -> PredictionSet:
    """Support = ``cap`` random rows; remaining train + test rows are embedded as queries,
    a logistic probe is fit on the remaining-train embeddings and applied to test."""
    n = len(train_X)
    support = _subsample(n, cap, seed)
    rest = np.setdiff1d(np.arange(n), support)
    Q = np.vstack([train_X[rest], test_X])
    emb = embedder(train_X[support], train_y[support], Q, seed)
    tr_emb, te_emb = emb[: len(rest)], emb[len(rest):]
    mu, sd = tr_emb.mean(0), tr_emb.std(0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    prober = prober or (lambda X, y, C: logistic_fit(X, y, C, l2=1e-4, epochs=500))
    model = prober((tr_emb - mu) / sd, train_y[rest], n_classes)
    return PredictionSet.from_probs(model.predict_proba((te_emb - mu) / sd), strategy="sq", seed=seed)


def large_scale_predict(train_X, train_y, test_X, plan: LargeScalePlan, seed: int, base,
                        task="classification", n_classes=0, embedder=None, prober=None) -> PredictionSet:
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    n = len(train_X)
    v = plan.variant
    if plan.cap >= n and v != "df":
        out = base(train_X, train_y, test_X, task, n_classes, seed)
        out.strategy = v
        return out

    if v == "b":
        members = []
        for r in range(plan.repetitions):
            mseed = derive_seed(seed, "member", r)
            rows = _subsample(n, plan.cap, mseed)
            members.append(base(train_X[rows], train_y[rows], test_X, task, n_classes, mseed))
        return aggregate(members, task, "b", seed)
    if v == "k":
        rows = kmeans_support(train_X, plan.cap, seed, plan.kmeans_iters)
        out = base(train_X[rows], train_y[rows], test_X, task, n_classes, seed)
        out.strategy = "k"
        out.meta["support"] = rows.tolist()
        return out
    if v == "dt":
        return tree_partition_predict(train_X, train_y, test_X, plan.cap, seed, base, task, n_classes)
    if v == "df":
        size = math.floor(plan.forest_fraction * n)
        members = []
        for r in range(plan.forest_size):
            mseed = derive_seed(seed, "member", r)
            rows = _subsample(n, size, mseed)
            members.append(tree_partition_predict(train_X[rows], train_y[rows], test_X, plan.cap, mseed, base, task, n_classes))
            members[-1].meta["rows"] = rows
        return aggregate(members, task, "df", seed)
    if v == "sq":
        if task != "classification":
            raise ContractError("sample-and-probe is defined for classification")
        if embedder is None:
            raise ContractError("sample-and-probe needs an embedder")
        members = [
            sample_and_probe(train_X, train_y, test_X, plan.cap, derive_seed(seed, "member", r), embedder, n_classes, prober)
            for r in range(plan.repetitions)
        ]
        return aggregate(members, task, "sq", seed)
    raise ContractError(f"unknown variant {v!r}")
