"""Prediction containers and the base predictors strategies can wrap.

A base predictor is any callable
``predictor(train_X, train_y, test_X, task, n_classes, seed) -> PredictionSet``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import cart_fit, cart_predict, knn_predict, linear_fit, logistic_fit
from .errors import ContractError
from .model import ICLModel, predict_classification, predict_regression


@dataclass
class PredictionSet:
    task: str
    labels: np.ndarray | None = None  # classification
    probs: np.ndarray | None = None  # (N_Q, C) when available
    values: np.ndarray | None = None  # regression
    strategy: str = "base"
    n_members: int = 1
    seed: int = 0
    members: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_query(self) -> int:
        return len(self.labels if self.task == "classification" else self.values)

    @property
    def output(self) -> np.ndarray:
        return self.labels if self.task == "classification" else self.values

    @classmethod
    def from_probs(cls, probs, **kw) -> "PredictionSet":
        probs = np.asarray(probs, dtype=np.float64)
        return cls("classification", labels=np.argmax(probs, axis=1), probs=probs, **kw)


class ICLPredictor:
    """The in-context model as a base predictor."""

    name = "icl"

    def __init__(self, model: ICLModel):
        self.model = model

    def __call__(self, train_X, train_y, test_X, task, n_classes=0, seed=0) -> PredictionSet:
        if task == "classification":
            probs = predict_classification(train_X, train_y, test_X, n_classes, self.model, seed)
            return PredictionSet.from_probs(probs, seed=seed)
        return PredictionSet("regression", values=predict_regression(train_X, train_y, test_X, self.model, seed), seed=seed)


def _standardized(train_X, test_X):
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    mu, sd = train_X.mean(0), train_X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train_X - mu) / sd, (test_X - mu) / sd


def _onehot(labels, C):
    out = np.zeros((len(labels), C))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


class KnnPredictor:
    name = "knn"

    def __init__(self, K: int = 5):
        self.K = K

    def __call__(self, train_X, train_y, test_X, task, n_classes=0, seed=0) -> PredictionSet:
        tx, qx = _standardized(train_X, test_X)
        K = min(self.K, len(tx))
        pred = knn_predict(tx, train_y, qx, K, task, n_classes)
        if task == "classification":
            return PredictionSet("classification", labels=pred, probs=_onehot(pred, n_classes), seed=seed)
        return PredictionSet("regression", values=pred, seed=seed)


class LinearPredictor:
    """Multinomial logistic regression or ridge regression, by task."""

    name = "linear"

    def __init__(self, l2: float = 1e-4, epochs: int = 500, ridge: float = 1e-3):
        self.l2, self.epochs, self.ridge = l2, epochs, ridge

    def __call__(self, train_X, train_y, test_X, task, n_classes=0, seed=0) -> PredictionSet:
        tx, qx = _standardized(train_X, test_X)
        if task == "classification":
            m = logistic_fit(tx, train_y, n_classes, self.l2, self.epochs)
            return PredictionSet.from_probs(m.predict_proba(qx), seed=seed)
        return PredictionSet("regression", values=linear_fit(tx, train_y, self.ridge).predict(qx), seed=seed)


class CartPredictor:
    name = "cart"

    def __init__(self, min_samples_split: int = 10, max_depth: int | None = 8):
        self.min_samples_split, self.max_depth = min_samples_split, max_depth

    def __call__(self, train_X, train_y, test_X, task, n_classes=0, seed=0) -> PredictionSet:
        tree = cart_fit(train_X, train_y, self.min_samples_split, task, n_classes or None, self.max_depth)
        pred = cart_predict(tree, test_X)
        if task == "classification":
            return PredictionSet("classification", labels=pred, probs=_onehot(pred, n_classes), seed=seed)
        return PredictionSet("regression", values=pred, seed=seed)


class DummyPredictor:
    """Majority class or training mean."""

    name = "dummy"

    def __call__(self, train_X, train_y, test_X, task, n_classes=0, seed=0) -> PredictionSet:
        n = len(np.atleast_2d(test_X))
        if task == "classification":
            counts = np.bincount(np.asarray(train_y, dtype=np.int64), minlength=n_classes)
            probs = np.tile(counts / counts.sum(), (n, 1))
            return PredictionSet("classification", labels=np.full(n, int(np.argmax(counts))), probs=probs, seed=seed)
        return PredictionSet("regression", values=np.full(n, float(np.mean(train_y))), seed=seed)


BASELINES = {
    "knn": KnnPredictor,
    "linear": LinearPredictor,
    "cart": CartPredictor,
    "dummy": DummyPredictor,
}


def baseline(name: str):
    if name not in BASELINES:
        raise ContractError(f"unknown baseline {name!r}; choose from {sorted(BASELINES)}")
    return BASELINES[name]()
