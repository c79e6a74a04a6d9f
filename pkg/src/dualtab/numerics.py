"""Tensor math, attention, optimizer and gradient checking.

Tensors are ``torch.Tensor`` objects; torch supplies storage and reverse-mode
differentiation.  Values are 32-bit by default.  ``float64_mode()`` switches
the default dtype to 64-bit for verification runs.
"""

from __future__ import annotations

import contextlib
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "RngStream",
    "derive_seed",
    "float64_mode",
    "default_dtype",
    "set_threads",
    "matmul",
    "softmax",
    "layer_norm",
    "multi_head_attention",
    "support_query_attention",
    "support_query_mask",
    "Adam",
    "adam_update",
    "grad_check",
]

LAYER_NORM_EPS = 1e-5

_state = {"dtype": torch.float32}


def default_dtype() -> torch.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """Run the enclosed block with 64-bit tensors (verification mode)."""
    prev, prev_torch = _state["dtype"], torch.get_default_dtype()
    _state["dtype"] = torch.float64
    torch.set_default_dtype(torch.float64)
    try:
        yield
    finally:
        _state["dtype"] = prev
        torch.set_default_dtype(prev_torch)


def set_threads(n: int) -> None:
    """Pin torch intra-op threads; ``1`` gives bit-reproducible runs."""
    torch.set_num_threads(max(1, int(n)))


# ---------------------------------------------------------------------------
# random streams


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Counter-style derivation: a 64-bit hash of (master, label, index)."""
    h = hashlib.blake2b(digest_size=8)
    h.update((int(master) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    h.update(label.encode("utf-8"))
    h.update(b"\x00")
    h.update((int(index) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by (seed, label, index)."""

    seed: int
    label: str = ""
    index: int = 0

    @property
    def key(self) -> int:
        return derive_seed(self.seed, self.label, self.index)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.key))

    def child(self, label: str, index: int = 0) -> "RngStream":
        return RngStream(self.key, label, index)

    def normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)


# ---------------------------------------------------------------------------
# elementary ops


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2:
        raise DimensionError(f"matmul expects matrices, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def softmax(v: torch.Tensor, axis: int = -1, check: bool = True) -> torch.Tensor:
    """Max-subtracted softmax.  ``-inf`` entries are allowed (masking), NaN is not."""
    if check and torch.isnan(v).any():
        raise NumericError("softmax input contains NaN")
    # torch's kernel subtracts the row max before exponentiating
    return torch.softmax(v, dim=axis)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, gain.shape, gain, bias, eps=LAYER_NORM_EPS)


def _sdpa(q, k, v, mask=None):
    # the fused CPU kernel only accepts 4-D inputs
    lead = q.shape[:-3]
    flat = lambda t: t.reshape(-1, *t.shape[-3:])
    if mask is not None and mask.dim() > 2:
        mask = mask.expand(*lead, *mask.shape[-3:]).reshape(-1, *mask.shape[-3:])
    out = F.scaled_dot_product_attention(flat(q), flat(k), flat(v), attn_mask=mask)
    return out.reshape(*lead, *out.shape[-3:])


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    return x.unflatten(-1, (heads, x.shape[-1] // heads)).transpose(-3, -2).contiguous()


def multi_head_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    heads: int,
    mask: torch.Tensor | None = None,
    out_proj: torch.Tensor | None = None,
    return_probs: bool = False,
):
    """Scaled dot-product attention split over ``heads``.

    ``q`` is ``(..., n_q, k)``; ``k`` and ``v`` are ``(..., n_k, k)``.  ``mask``
    is boolean ``(n_q, n_k)`` (broadcastable), True where attention is allowed.
    Head outputs are concatenated and multiplied by ``out_proj`` (``k x k``,
    identity when omitted).  With ``return_probs`` the per-head attention
    probabilities ``(..., heads, n_q, n_k)`` are returned as well.
    """
    width = q.shape[-1]
    if width % heads:
        raise ContractError(f"width {width} not divisible by {heads} heads")
    if k.shape[-1] != width or v.shape[-1] != width or k.shape[-2] != v.shape[-2]:
        raise DimensionError("query/key/value shapes are inconsistent")
    dh = width // heads
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    if mask is not None:
        mask = mask.to(torch.bool)
        if not mask.any(dim=-1).all():
            raise ContractError("a query row has every key masked")
    probs = None
    if return_probs:
        scores = (qh @ kh.transpose(-1, -2)) / math.sqrt(dh)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        probs = softmax(scores, axis=-1)
        out = probs @ vh
    else:
        out = _sdpa(qh, kh, vh, mask)
    out = out.transpose(-3, -2).flatten(-2)
    if out_proj is not None:
        out = out @ out_proj
    if return_probs:
        return out, probs
    return out


def support_query_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    heads: int,
    n_support: int,
    out_proj: torch.Tensor | None = None,
) -> torch.Tensor:
    """Attention over rows where support attends to support, query to support + itself.

    Equivalent to ``multi_head_attention`` with the corresponding boolean mask,
    but costs O(N * N_S) instead of O(N^2) and never mixes two queries.
    """
    width = q.shape[-1]
    if width % heads:
        raise ContractError(f"width {width} not divisible by {heads} heads")
    if n_support < 1:
        raise ContractError("a query row has every key masked")
    dh = width // heads
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    ks, vs = kh[..., :n_support, :], vh[..., :n_support, :]
    scale = 1.0 / math.sqrt(dh)

    out_s = _sdpa(qh[..., :n_support, :], ks, vs)

    qq = qh[..., n_support:, :]
    if qq.shape[-2]:
        cross = (qq @ ks.transpose(-1, -2)) * scale
        own = (qq * kh[..., n_support:, :]).sum(-1, keepdim=True) * scale
        probs = softmax(torch.cat([cross, own], dim=-1), axis=-1, check=False)
        out_q = probs[..., :-1] @ vs + probs[..., -1:] * vh[..., n_support:, :]
        out = torch.cat([out_s, out_q], dim=-2)
    else:
        out = out_s
    out = out.transpose(-3, -2).flatten(-2)
    if out_proj is not None:
        out = out @ out_proj
    return out


def support_query_mask(n_support: int, n_query: int) -> torch.Tensor:
    n = n_support + n_query
    mask = torch.zeros(n, n, dtype=torch.bool)
    mask[:, :n_support] = True
    idx = torch.arange(n_support, n)
    mask[idx, idx] = True
    return mask


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    """Bias-corrected Adam holding first/second moments per parameter."""

    params: Sequence[torch.Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.first:
            self.first = [torch.zeros_like(p) for p in self.params]
            self.second = [torch.zeros_like(p) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        self.step_count += 1
        adam_update(
            self.params, self.first, self.second,
            self.lr if lr is None else lr, self.beta1, self.beta2, self.eps, self.step_count,
        )


@torch.no_grad()
def adam_update(params, first, second, lr, beta1, beta2, eps, step) -> None:
    """In-place Adam step; gradients are cleared afterwards."""
    if step < 1:
        raise ContractError("Adam step counter starts at 1")
    grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
    for g in grads:
        if not torch.isfinite(g).all():
            raise NumericError("non-finite gradient in adam_update")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p, g, m, s in zip(params, grads, first, second):
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        s.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        p.sub_(lr * (m / c1) / (torch.sqrt(s / c2) + eps))
        p.grad = None


# ---------------------------------------------------------------------------
# gradient check


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    eps: float = 1e-6,
    n_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences.

    ``params`` should be 64-bit leaf tensors with ``requires_grad``; run inside
    ``float64_mode()``.  When ``n_coords`` is given, that many coordinates are
    sampled uniformly over all parameters; otherwise every coordinate is checked.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    if n_coords is None or n_coords >= total:
        flat_ids = np.arange(total)
    else:
        flat_ids = np.sort(RngStream(seed, "grad_check").generator().choice(total, n_coords, replace=False))
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            pi = int(np.searchsorted(offsets, fid, side="right") - 1)
            local = int(fid - offsets[pi])
            view = params[pi].view(-1)
            orig = view[local].item()
            view[local] = orig + eps
            up = float(loss_fn())
            view[local] = orig - eps
            down = float(loss_fn())
            view[local] = orig
            numeric = (up - down) / (2 * eps)
            analytic = float(grads[pi].reshape(-1)[local])
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
