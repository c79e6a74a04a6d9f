"""Token grids for in-context tabular prediction.

Two schemes live here.  The per-attribute scheme turns every cell into its own
token ``x_j * u + r_j``, where ``r_j = W p_j`` and ``p_j`` is a fresh Gaussian
draw keyed by the context seed, and appends a label token per row.  The older
zero-pad scheme pads each instance to a fixed width and projects the whole row
to a single token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, DimensionError
from .numerics import RngStream, default_dtype

MAX_CLASSES = 10


@dataclass(frozen=True)
class AttributePerturbations:
    raw: np.ndarray  # (d, k') draws p_j
    offsets: torch.Tensor  # (d, k) r_j = W p_j
    seed: int

    @property
    def d(self) -> int:
        return self.raw.shape[0]

    def permuted(self, order) -> "AttributePerturbations":
        order = np.asarray(order)
        return AttributePerturbations(self.raw[order], self.offsets[torch.as_tensor(order)], self.seed)


@dataclass
class ContextTensor:
    values: torch.Tensor  # (N_S + N_Q, d + 1, k)
    n_support: int
    n_query: int
    perturbations: AttributePerturbations | None = None

    @property
    def is_query(self) -> np.ndarray:
        return np.arange(self.n_support + self.n_query) >= self.n_support

    @property
    def shape(self):
        return tuple(self.values.shape)


def draw_attribute_vectors(d: int, k_src: int, seed: int) -> np.ndarray:
    """Raw unit-normal draws, one stream per attribute index."""
    if d < 1:
        raise ContractError("need at least one attribute")
    return np.stack([RngStream(seed, "attr", j).normal(k_src) for j in range(d)])


def sample_perturbations(d: int, k_src: int, W: torch.Tensor, seed: int) -> AttributePerturbations:
    raw = draw_attribute_vectors(d, k_src, seed)
    p = torch.as_tensor(raw, dtype=W.dtype)
    return AttributePerturbations(raw, p @ W.T, seed)


def tokenize_instance_v2(x, perturbations: AttributePerturbations, u: torch.Tensor, label_embedding: torch.Tensor) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=u.dtype).reshape(-1)
    if x.shape[0] > perturbations.d:
        raise DimensionError(f"{x.shape[0]} attributes but only {perturbations.d} perturbations")
    feats = x[:, None] * u[None, :] + perturbations.offsets[: x.shape[0]]
    return torch.cat([feats, label_embedding.reshape(1, -1)], dim=0)


def embed_features(X: torch.Tensor, offsets: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Batched attribute tokens: ``(..., N, d)`` -> ``(..., N, d, k)``."""
    return X[..., None] * u + offsets.unsqueeze(-3)


def class_label_embeddings(y: torch.Tensor, class_table: torch.Tensor) -> torch.Tensor:
    if y.numel() and int(y.max()) >= MAX_CLASSES:
        raise ContractError(f"class index {int(y.max())} exceeds the {MAX_CLASSES}-class readout")
    return class_table[y.long()]


def regression_label_embeddings(y: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    return y[..., None] * weight + bias


def dummy_label(task: str, params, train_labels=None) -> torch.Tensor:
    """Label token for rows whose target is unknown.

    Regression contexts carry z-scored targets, so the training mean is 0 and
    the dummy is the scalar map evaluated at 0.  Classification uses the
    dedicated learned row; the label histogram is ignored.
    """
    if task == "regression":
        return regression_label_embeddings(torch.zeros((), dtype=params.reg_bias.dtype), params.reg_weight, params.reg_bias)
    if task == "classification":
        return params.dummy
    raise ContractError(f"unknown task {task!r}")


def tokenize_context_v1(
    support_X,
    support_labels: torch.Tensor,
    query_X,
    k_pad: int,
    projection: torch.Tensor,
    dummy_embedding: torch.Tensor,
) -> torch.Tensor:
    """Zero-pad rows to ``k_pad``, project to ``k`` and add label tokens.

    ``support_labels`` holds one already-projected ``k``-vector per support
    row.  Queries receive ``dummy_embedding``.  Returns ``(N_S + N_Q, k)``.
    """
    sx = np.atleast_2d(np.asarray(support_X, dtype=np.float64))
    qx = np.atleast_2d(np.asarray(query_X, dtype=np.float64)) if len(query_X) else np.zeros((0, sx.shape[1]))
    d = sx.shape[1]
    if d > k_pad:
        raise ContractError(f"{d} attributes exceed pad width {k_pad}")
    if qx.shape[1] != d:
        raise DimensionError("support and query widths differ")
    rows = np.zeros((sx.shape[0] + qx.shape[0], k_pad))
    rows[: sx.shape[0], :d] = sx
    rows[sx.shape[0]:, :d] = qx
    tokens = torch.as_tensor(rows, dtype=projection.dtype) @ projection
    labels = torch.cat([support_labels.reshape(sx.shape[0], -1), dummy_embedding.reshape(1, -1).expand(qx.shape[0], -1)], dim=0)
    return tokens + labels


def build_context(
    support_X,
    support_y,
    query_X,
    params,
    seed: int,
    task: str = "classification",
    perturbations: AttributePerturbations | None = None,
) -> ContextTensor:
    """Tokenize support rows (true labels) then query rows (dummy label).

    ``support_y`` holds class indices or already z-scored regression targets.
    All rows share one perturbation draw; pass ``perturbations`` to reuse a
    specific draw (e.g. a column-permuted one).
    """
    dtype = params.u.dtype
    sx = torch.as_tensor(np.atleast_2d(np.asarray(support_X, dtype=np.float64)), dtype=dtype)
    qx = np.asarray(query_X, dtype=np.float64)
    if not qx.size:
        qx = np.zeros((0, sx.shape[1]))
    elif qx.ndim == 1:
        qx = qx.reshape(-1, sx.shape[1]) if qx.size % sx.shape[1] == 0 else qx[None, :]
    qx = torch.as_tensor(qx, dtype=dtype)
    if sx.shape[0] < 1:
        raise ContractError("support set is empty")
    if qx.shape[1] != sx.shape[1]:
        raise DimensionError(f"support has {sx.shape[1]} attributes, query has {qx.shape[1]}")
    d = sx.shape[1]
    if perturbations is None:
        perturbations = sample_perturbations(d, params.W.shape[1], params.W, seed)
    elif perturbations.d != d:
        raise DimensionError("perturbations do not cover every attribute")

    X = torch.cat([sx, qx], dim=0)
    feats = embed_features(X, perturbations.offsets.to(dtype), params.u)
    if task == "classification":
        lab = class_label_embeddings(torch.as_tensor(np.asarray(support_y)).long(), params.class_table)
    elif task == "regression":
        lab = regression_label_embeddings(torch.as_tensor(np.asarray(support_y, dtype=np.float64), dtype=dtype), params.reg_weight, params.reg_bias)
    else:
        raise ContractError(f"unknown task {task!r}")
    dummy = dummy_label(task, params).reshape(1, -1).expand(qx.shape[0], -1)
    labels = torch.cat([lab, dummy], dim=0)
    values = torch.cat([feats, labels[:, None, :]], dim=1)
    return ContextTensor(values, sx.shape[0], qx.shape[0], perturbations)
