from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CartTree:
    """Array-backed binary tree.  ``feature[i] == -1`` marks a leaf."""

    task: str
    min_samples_split: int
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)  # class histogram or mean
    n_samples: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> list[int]:
        return [i for i, f in enumerate(self.feature) if f < 0]

    def _add(self, value, n) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.n_samples.append(n)
        return len(self.feature) - 1


def _impurity(y, task, n_classes):
    if task == "classification":
        p = np.bincount(y, minlength=n_classes) / len(y)
        return 1.0 - float((p**2).sum())
    return float(y.var())


def _best_split(X, y, task, n_classes):
    """Lowest weighted child impurity; ties keep the lowest feature, then threshold."""
    n = len(y)
    best = (np.inf, -1, 0.0)
    if task == "classification":
        onehot_all = np.zeros((n, n_classes))
        onehot_all[np.arange(n), y] = 1.0
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        valid = np.nonzero(xs[1:] > xs[:-1])[0]  # split after position i
        if len(valid) == 0:
            continue
        n_left = valid + 1
        n_right = n - n_left
        if task == "classification":
            cum = np.cumsum(onehot_all[order], axis=0)
            left_counts = cum[valid]
            right_counts = cum[-1] - left_counts
            gini_l = 1.0 - ((left_counts / n_left[:, None]) ** 2).sum(1)
            gini_r = 1.0 - ((right_counts / n_right[:, None]) ** 2).sum(1)
            score = (n_left * gini_l + n_right * gini_r) / n
        else:
            cs, cs2 = np.cumsum(ys), np.cumsum(ys**2)
            sl, sl2 = cs[valid], cs2[valid]
            sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
            var_l = sl2 / n_left - (sl / n_left) ** 2
            var_r = sr2 / n_right - (sr / n_right) ** 2
            score = (n_left * var_l + n_right * var_r) / n
        i = int(np.argmin(score))  # first minimum -> lowest threshold
        if score[i] < best[0] - 1e-12:
            best = (float(score[i]), j, float((xs[valid[i]] + xs[valid[i] + 1]) / 2))
    return best


def cart_fit(X, y, min_samples_split: int = 2, task: str = "classification", n_classes: int | None = None, max_depth: int | None = None) -> CartTree:
    """Greedy CART: Gini for classification, variance reduction for regression."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if task == "classification":
        y = y.astype(np.int64)
        n_classes = n_classes or int(y.max()) + 1
    else:
        y = y.astype(np.float64)
    tree = CartTree(task, min_samples_split)

    def leaf_value(rows):
        if task == "classification":
            return np.bincount(y[rows], minlength=n_classes).astype(np.float64)
        return float(y[rows].mean())

    root = tree._add(leaf_value(np.arange(len(y))), len(y))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if len(rows) < min_samples_split or len(rows) < 2:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        parent = _impurity(y[rows], task, n_classes)
        if parent <= 1e-15:
            continue
        score, j, thr = _best_split(X[rows], y[rows], task, n_classes)
        if j < 0 or score >= parent - 1e-15:
            continue
        mask = X[rows, j] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        tree.feature[node] = j
        tree.threshold[node] = thr
        tree.left[node] = tree._add(leaf_value(lrows), len(lrows))
        tree.right[node] = tree._add(leaf_value(rrows), len(rrows))
        stack.append((tree.right[node], rrows, depth + 1))
        stack.append((tree.left[node], lrows, depth + 1))
    return tree


def cart_route(tree: CartTree, x) -> int:
    """Leaf id reached by ``x`` (left branch when ``x[f] <= threshold``)."""
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return node


def cart_route_all(tree: CartTree, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.array([cart_route(tree, x) for x in X], dtype=np.int64)


def cart_predict(tree: CartTree, X) -> np.ndarray:
    leaves = cart_route_all(tree, X)
    if tree.task == "classification":
        return np.array([int(np.argmax(tree.value[i])) for i in leaves], dtype=np.int64)
    return np.array([tree.value[i] for i in leaves], dtype=np.float64)
