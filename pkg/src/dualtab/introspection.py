"""Embedding extraction, probing and attention/token inspection."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from . import tokenizer as tok
from .classical import logistic_fit, pca_fit, pca_transform
from .dataset import kfold_partition
from .errors import CapacityError, ContractError, SplitError
from .model import ICLModel, standardize_by_support
from .numerics import derive_seed

MODES = ("vanilla", "lofo", "dummy", "permute")


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray
    ids: np.ndarray
    split: np.ndarray  # "train" / "test" per row
    mode: str
    layers: tuple
    folds: np.ndarray | None = None  # -1 for rows outside the fold rotation

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def part(self, which: str) -> np.ndarray:
        return self.rows[self.split == which]


@dataclass
class AttentionSummary:
    maps: dict  # layer -> (d+1, d+1)
    seed: int

    def __getitem__(self, layer):
        return self.maps[layer]


def _context_targets(y, task):
    """Class ids as-is; regression targets z-scored as during prediction."""
    if task == "classification":
        return np.asarray(y, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    sd = y.std()
    return (y - y.mean()) / (sd if sd > 0 else 1.0)


def _layers(model: ICLModel, layer) -> tuple:
    layers = (layer,) if np.isscalar(layer) else tuple(layer)
    for ell in layers:
        if not 0 <= ell <= model.cfg.depth:
            raise ContractError(f"layer {ell} outside 0..{model.cfg.depth}")
    return layers


@torch.no_grad()
def context_activations(model: ICLModel, Sx, Sy, Qx, task: str, seed: int, layers, chunk: int = 512) -> np.ndarray:
    """Concatenated label-slot activations for support rows followed by query rows."""
    Sx = np.asarray(Sx, dtype=np.float64)
    Qx = np.asarray(Qx, dtype=np.float64).reshape(-1, Sx.shape[1])
    Sz, Qz = standardize_by_support(Sx, Qx)
    pert = tok.sample_perturbations(Sx.shape[1], model.cfg.k_src, model.W, seed)
    support_part, query_parts = None, []
    starts = list(range(0, len(Qz), chunk)) or [0]
    for a in starts:
        ctx = tok.build_context(Sz, Sy, Qz[a:a + chunk], model, seed, task=task, perturbations=pert)
        model.check_caps(ctx.values.shape[0], Sx.shape[1])
        _, acts = model.run_blocks(ctx.values.unsqueeze(0), ctx.n_support, capture=True)
        slots = torch.cat([acts.label_slots[ell][0] for ell in layers], dim=-1).double().numpy()
        if support_part is None:
            support_part = slots[: ctx.n_support]
        query_parts.append(slots[ctx.n_support:])
    return np.vstack([support_part] + query_parts)


def vanilla_embeddings(train_X, train_y, test_X, model: ICLModel, layer, seed: int = 0, task: str = "classification") -> EmbeddingMatrix:
    """Train rows keep their true labels in one shared context; test rows use the dummy label."""
    layers = _layers(model, layer)
    n_tr = len(train_X)
    rows = context_activations(model, train_X, _context_targets(train_y, task), test_X, task, seed, layers)
    n_te = rows.shape[0] - n_tr
    return EmbeddingMatrix(
        rows, np.concatenate([np.arange(n_tr), np.arange(n_te)]),
        np.array(["train"] * n_tr + ["test"] * n_te), "vanilla", layers,
    )


def lofo_embeddings(train_X, train_y, test_X, model: ICLModel, folds: int = 10, layer=None, seed: int = 0,
                    task: str = "classification") -> EmbeddingMatrix:
    """Each fold is embedded as queries against the other folds; test rows use the full train support."""
    layer = model.cfg.depth if layer is None else layer
    layers = _layers(model, layer)
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    n_tr = len(train_X)
    labels = train_y if task == "classification" else None
    parts = kfold_partition(np.arange(n_tr), folds, seed, labels)
    width = model.cfg.k * len(layers)
    train_rows = np.zeros((n_tr, width))
    fold_of = np.full(n_tr, -1)
    classes = set(np.unique(train_y)) if task == "classification" else set()
    for f, q in enumerate(parts):
        s = np.setdiff1d(np.arange(n_tr), q)
        if task == "classification":
            lost = classes - set(np.unique(train_y[s]))
            if lost:
                raise SplitError(f"fold {f} removes classes {sorted(lost)} from the support")
        sy = _context_targets(train_y[s], task)
        acts = context_activations(model, train_X[s], sy, train_X[q], task, seed, layers)
        train_rows[q] = acts[len(s):]
        fold_of[q] = f
    ty = _context_targets(train_y, task)
    test_acts = context_activations(model, train_X, ty, test_X, task, seed, layers)[n_tr:]
    n_te = len(test_acts)
    return EmbeddingMatrix(
        np.vstack([train_rows, test_acts]),
        np.concatenate([np.arange(n_tr), np.arange(n_te)]),
        np.array(["train"] * n_tr + ["test"] * n_te), "lofo", layers,
        np.concatenate([fold_of, np.full(n_te, -1)]),
    )


def unsupervised_embeddings(X, model: ICLModel, mode: str = "dummy", seed: int = 0, layer=None,
                            categorical=None) -> EmbeddingMatrix:
    """Label-free embeddings.

    ``dummy``: every row is a support row of a regression task whose target is
    the constant 0.  ``permute``: for each column j, predict column j from the
    others (classification for categorical columns) and concatenate the d
    resulting embeddings.
    """
    layer = model.cfg.depth if layer is None else layer
    layers = _layers(model, layer)
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    empty = np.zeros((0, d))
    if mode == "dummy":
        rows = context_activations(model, X, np.zeros(n), empty, "regression", seed, layers)
    elif mode == "permute":
        if d < 2:
            raise ContractError("permute mode needs at least two features")
        categorical = list(categorical) if categorical is not None else [False] * d
        blocks = []
        for j in range(d):
            rest = np.delete(X, j, axis=1)
            col = X[:, j]
            jseed = derive_seed(seed, "column", j)
            if categorical[j]:
                values, codes = np.unique(col, return_inverse=True)
                if len(values) > 10:
                    raise CapacityError(f"categorical column {j} has {len(values)} levels (max 10)")
                blocks.append(context_activations(model, rest, codes, empty[:, 1:], "classification", jseed, layers))
            else:
                sd = col.std()
                target = (col - col.mean()) / (sd if sd > 0 else 1.0)
                blocks.append(context_activations(model, rest, target, empty[:, 1:], "regression", jseed, layers))
        rows = np.hstack(blocks)
    else:
        raise ContractError(f"unknown unsupervised mode {mode!r}")
    return EmbeddingMatrix(rows, np.arange(n), np.array(["train"] * n), mode, layers)


# ---------------------------------------------------------------------------
# probing


def linear_probe(train_emb, train_y, test_emb, test_y, n_classes: int | None = None, l2: float = 1e-4, epochs: int = 500) -> float:
    """Accuracy of a logistic regression fit on frozen embeddings (standardized by train stats)."""
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_emb.shape[1] != test_emb.shape[1]:
        raise ContractError("train and test embeddings differ in width")
    if len(np.unique(train_y)) < 2:
        raise ContractError("probe needs at least two classes in the training labels")
    mu, sd = train_emb.mean(0), train_emb.std(0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    C = n_classes or int(max(train_y.max(), np.max(test_y))) + 1
    model = logistic_fit((train_emb - mu) / sd, train_y, C, l2=l2, epochs=epochs)
    return float(np.mean(model.predict((test_emb - mu) / sd) == np.asarray(test_y)))


def select_layer_combination(score, candidates=None, max_layers: int = 3) -> tuple:
    """Exhaustive search over layer subsets of size 1..max_layers.

    ``score`` maps a sorted tuple of layers to validation accuracy (a dict or a
    callable).  Ties prefer fewer layers, then the lexicographically smallest.
    """
    if isinstance(score, dict):
        table = score
        candidates = candidates if candidates is not None else sorted({l for key in table for l in key})
        score = table.__getitem__
    if not candidates:
        raise ContractError("need at least one candidate layer")
    candidates = sorted(candidates)
    best, best_key = None, None
    for size in range(1, min(max_layers, len(candidates)) + 1):
        for combo in itertools.combinations(candidates, size):
            try:
                s = float(score(combo))
            except KeyError:
                continue
            if best is None or s > best:
                best, best_key = s, combo
    if best_key is None:
        raise ContractError("no scored layer subset")
    return best_key


# ---------------------------------------------------------------------------
# attention and tokens


@torch.no_grad()
def _support_run(model: ICLModel, X, y, seed: int, task: str, grids=False, attention=False):
    X = np.asarray(X, dtype=np.float64)
    Xz, _ = standardize_by_support(X, X[:0])
    ctx = tok.build_context(Xz, y, Xz[:0], model, seed, task=task)
    _, acts = model.run_blocks(ctx.values.unsqueeze(0), ctx.n_support, capture=grids, grids=grids, attention=attention)
    return ctx, acts


def attention_summary(train_X, train_y, model: ICLModel, layer=None, seed: int = 0, task: str = "classification") -> AttentionSummary:
    """Feature-axis attention of block ``layer`` (1-based), averaged over heads and support rows."""
    layers = range(1, model.cfg.depth + 1) if layer is None else _layers(model, layer)
    if 0 in layers:
        raise ContractError("layer 0 is the embedded input and has no attention block")
    _, acts = _support_run(model, train_X, train_y, seed, task, attention=True)
    maps = {ell: acts.feature_attention[ell - 1][0].double().numpy() for ell in layers}
    return AttentionSummary(maps, seed)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class StabilityReport:
    layer: int
    seeds: list
    cosines: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.cosines)) if self.cosines else 1.0

    @property
    def variance(self) -> float:
        return float(np.var(self.cosines)) if self.cosines else 0.0


def attention_stability(train_X, train_y, model: ICLModel, layer: int, runs: int = 10, seed: int = 0,
                        seeds=None, task: str = "classification") -> StabilityReport:
    """Pairwise cosine similarity of flattened attention maps across perturbation seeds."""
    seeds = list(seeds) if seeds is not None else [derive_seed(seed, "stability", r) for r in range(runs)]
    maps = [attention_summary(train_X, train_y, model, layer, s, task)[layer].ravel() for s in seeds]
    report = StabilityReport(layer, seeds)
    for i, j in itertools.combinations(range(len(maps)), 2):
        report.cosines.append(_cosine(maps[i], maps[j]))
    return report


def token_pca_projection(train_X, train_y, model: ICLModel, layer: int, seed: int = 0, task: str = "classification"):
    """2-D PCA of every feature-slot token at ``layer``: ``(N*d, 2)`` coordinates and attribute ids."""
    (layer,) = _layers(model, layer)
    ctx, acts = _support_run(model, train_X, train_y, seed, task, grids=True)
    grid = acts.grids[layer][0, :, :-1, :].double().numpy()  # (N, d, k)
    n, d, k = grid.shape
    tokens = grid.reshape(n * d, k)
    pca = pca_fit(tokens, min(2, k, max(1, n * d)), seed=seed)
    coords = pca_transform(pca, tokens)
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((len(coords), 2 - coords.shape[1]))])
    return coords, np.tile(np.arange(d), n)


# ---------------------------------------------------------------------------
# CSV exports


def write_embeddings_csv(emb: EmbeddingMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split", "fold"] + [f"e_{i}" for i in range(emb.width)])
        folds = emb.folds if emb.folds is not None else np.full(len(emb.rows), -1)
        for i in range(len(emb.rows)):
            w.writerow([int(emb.ids[i]), emb.split[i], int(folds[i])] + [repr(float(v)) for v in emb.rows[i]])


def write_attention_csv(summary: AttentionSummary, path, columns=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "from", "to", "weight"])
        for ell, m in sorted(summary.maps.items()):
            names = (list(columns) if columns else [f"x{j}" for j in range(m.shape[0] - 1)]) + ["label"]
            for a in range(m.shape[0]):
                for b in range(m.shape[1]):
                    w.writerow([ell, names[a], names[b], repr(float(m[a, b]))])


def write_projection_csv(coords, attributes, path, columns=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "pc1", "pc2"])
        for (a, b), j in zip(coords, attributes):
            w.writerow([columns[j] if columns else f"x{j}", repr(float(a)), repr(float(b))])
