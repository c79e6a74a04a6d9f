"""Dual-axis attention transformer over token grids.

Each block runs attention across the tokens of a row (feature axis), then
across rows within each token column (sample axis), then a feed-forward
layer, all as pre-norm residual updates.  On the sample axis support rows
attend to support rows and a query attends to the support plus itself, so
queries never see each other.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import tokenizer as tok
from .errors import CapacityError, ContractError, FormatError
from .numerics import (
    RngStream,
    default_dtype,
    layer_norm,
    multi_head_attention,
    softmax,
    support_query_attention,
)
from .tokenizer import MAX_CLASSES, ContextTensor

FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    k: int = 32
    k_src: int = 16
    heads: int = 4
    depth: int = 6
    ff_mult: int = 4
    max_classes: int = MAX_CLASSES
    max_rows: int = 20000
    max_attributes: int = 100

    def __post_init__(self):
        if self.k % self.heads:
            raise ContractError("k must be divisible by heads")
        if self.depth < 1:
            raise ContractError("depth must be >= 1")
        if self.k_src > self.k:
            raise ContractError("perturbation source width must not exceed k")
        if self.max_classes != MAX_CLASSES:
            raise ContractError("the readout is fixed at 10 classes")


@dataclass
class LayerActivations:
    """Label-slot vectors after each block; index 0 is the embedded input."""

    label_slots: list = field(default_factory=list)
    grids: list | None = None
    feature_attention: list = field(default_factory=list)


class _Norm(nn.Module):
    def __init__(self, k):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(k))
        self.bias = nn.Parameter(torch.zeros(k))

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)


class _Attention(nn.Module):
    def __init__(self, k, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(k, 3 * k)
        self.out = nn.Linear(k, k)

    def project(self, x):
        return self.qkv(x).chunk(3, dim=-1)


class DualBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k = cfg.k
        self.norm_feat = _Norm(k)
        self.attn_feat = _Attention(k, cfg.heads)
        self.norm_samp = _Norm(k)
        self.attn_samp = _Attention(k, cfg.heads)
        self.norm_ff = _Norm(k)
        self.ff_in = nn.Linear(k, cfg.ff_mult * k)
        self.ff_out = nn.Linear(cfg.ff_mult * k, k)

    def forward(self, h, n_support, want_probs=False):
        # h: (B, N, T, k)
        q, k, v = self.attn_feat.project(self.norm_feat(h))
        res = multi_head_attention(q, k, v, self.attn_feat.heads, return_probs=want_probs)
        probs = None
        if want_probs:
            res, probs = res
        h = h + self.attn_feat.out(res)

        hs = h.transpose(1, 2)  # (B, T, N, k)
        q, k, v = self.attn_samp.project(self.norm_samp(hs))
        res = support_query_attention(q, k, v, self.attn_samp.heads, n_support)
        h = (hs + self.attn_samp.out(res)).transpose(1, 2)

        h = h + self.ff_out(torch.nn.functional.gelu(self.ff_in(self.norm_ff(h))))
        return h, probs


class ICLModel(nn.Module):
    """Tokenizer parameters, dual-axis blocks and the two readouts."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        k = cfg.k
        self.u = nn.Parameter(torch.zeros(k))
        self.W = nn.Parameter(torch.zeros(k, cfg.k_src))
        self.class_table = nn.Parameter(torch.zeros(MAX_CLASSES, k))
        self.dummy = nn.Parameter(torch.zeros(k))
        self.reg_weight = nn.Parameter(torch.zeros(k))
        self.reg_bias = nn.Parameter(torch.zeros(k))
        self.blocks = nn.ModuleList(DualBlock(cfg) for _ in range(cfg.depth))
        self.norm_out = _Norm(k)
        self.cls_hidden = nn.Linear(k, 2 * k)
        self.cls_out = nn.Linear(2 * k, MAX_CLASSES)
        self.reg_hidden = nn.Linear(k, 2 * k)
        self.reg_out = nn.Linear(2 * k, 1)
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int) -> None:
        """Deterministic init from ``RngStream(seed, "init", i)`` per tensor."""
        for i, (name, p) in enumerate(sorted(self.named_parameters())):
            base = name.rsplit(".", 1)[-1]
            if base in ("gain",):
                p.fill_(1.0)
                continue
            if base == "bias" and p.dim() == 1 and name not in ("reg_bias",):
                p.zero_()
                continue
            fan_in = p.shape[-1] if p.dim() > 1 else p.shape[0]
            std = 1.0 / math.sqrt(fan_in)
            if name in ("u", "class_table", "dummy", "reg_weight", "reg_bias"):
                std = 1.0
            if name.endswith("out.weight") and "blocks" in name:
                std /= math.sqrt(2 * self.cfg.depth)
            draw = RngStream(seed, "init:" + name, i).normal(tuple(p.shape))
            p.copy_(torch.as_tensor(draw * std, dtype=p.dtype))

    # -- forward ------------------------------------------------------------

    def check_caps(self, n_rows: int, d: int) -> None:
        if n_rows > self.cfg.max_rows:
            raise CapacityError(f"context has {n_rows} rows; cap is {self.cfg.max_rows}")
        if d > self.cfg.max_attributes:
            raise CapacityError(f"context has {d} attributes; cap is {self.cfg.max_attributes}")

    def run_blocks(self, h: torch.Tensor, n_support: int, capture: bool = False, grids: bool = False, attention: bool = False):
        """Push a batched grid ``(B, N, T, k)`` through every block."""
        acts = LayerActivations(grids=[] if grids else None) if capture or attention else None
        if capture:
            acts.label_slots.append(h[:, :, -1, :].detach().clone())
            if grids:
                acts.grids.append(h.detach().clone())
        for block in self.blocks:
            h, probs = block(h, n_support, want_probs=attention)
            if attention:
                # (B*N..., H, T, T) -> average heads and support rows
                acts.feature_attention.append(probs[:, :n_support].mean(dim=(1, 2)).detach().clone())
            if capture:
                acts.label_slots.append(h[:, :, -1, :].detach().clone())
                if grids:
                    acts.grids.append(h.detach().clone())
        return h, acts

    def readout(self, h: torch.Tensor):
        z = self.norm_out(h[..., -1, :])
        logits = self.cls_out(torch.nn.functional.gelu(self.cls_hidden(z)))
        scalar = self.reg_out(torch.nn.functional.gelu(self.reg_hidden(z))).squeeze(-1)
        return logits, scalar

    def forward(self, ctx: ContextTensor, capture: bool = False):
        """Logits ``(N_Q, 10)``, scalars ``(N_Q,)`` and optional activations."""
        n, t, _ = ctx.values.shape
        self.check_caps(n, t - 1)
        h, acts = self.run_blocks(ctx.values.unsqueeze(0), ctx.n_support, capture=capture)
        logits, scalar = self.readout(h[0, ctx.n_support:])
        if capture:
            acts.label_slots = [a[0] for a in acts.label_slots]
            return logits, scalar, acts
        return logits, scalar, None

    def embed_batch(self, Xs, ys, Xq, offsets, task_is_reg):
        """Batched token grids for training.

        ``Xs`` (B, N_S, d), ``ys`` (B, N_S) class ids or z-scores, ``Xq``
        (B, N_Q, d), ``offsets`` (B, d, k), ``task_is_reg`` (B,) bool.
        """
        X = torch.cat([Xs, Xq], dim=1)
        feats = tok.embed_features(X, offsets, self.u)
        reg = task_is_reg[:, None, None]
        cls_lab = self.class_table[torch.where(reg[..., 0], torch.zeros_like(ys), ys).long()]
        reg_lab = tok.regression_label_embeddings(torch.where(reg[..., 0], ys, torch.zeros_like(ys)).to(feats.dtype), self.reg_weight, self.reg_bias)
        lab_s = torch.where(reg, reg_lab, cls_lab)
        reg_dummy = self.reg_bias.expand(Xq.shape[0], Xq.shape[1], -1)
        cls_dummy = self.dummy.expand(Xq.shape[0], Xq.shape[1], -1)
        lab_q = torch.where(reg, reg_dummy, cls_dummy)
        labels = torch.cat([lab_s, lab_q], dim=1)
        return torch.cat([feats, labels.unsqueeze(2)], dim=2)

    @property
    def tokenizer_params(self):
        return self

    # -- serialization --------------------------------------------------------

    def state_arrays(self) -> dict:
        return {name: p.detach().cpu().numpy().astype("<f4") for name, p in sorted(self.named_parameters())}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.state_arrays().items():
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()


DEFAULT_WEIGHTS = Path(__file__).resolve().parent / "resources" / "default"


def _paths(path) -> tuple[Path, Path]:
    """``"default"`` names the checkpoint shipped with the package."""
    path = DEFAULT_WEIGHTS if str(path) == "default" else Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_weights(model: ICLModel, path, extra: dict | None = None) -> Path:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (little-endian f32 blob)."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tensors, offset, chunks = [], 0, []
    for name, arr in model.state_arrays().items():
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_VERSION,
        "dtype": "float32-le",
        "config": asdict(model.cfg),
        "tensors": tensors,
        "blob": blob_path.name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_weights(path) -> ICLModel:
    manifest_path, blob_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read weights manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise FormatError(f"unsupported weights format {manifest.get('format')!r}")
    blob = (manifest_path.parent / manifest.get("blob", blob_path.name)).read_bytes()
    model = ICLModel(ModelConfig(**manifest["config"]))
    params = dict(model.named_parameters())
    seen = set()
    with torch.no_grad():
        for entry in manifest["tensors"]:
            name = entry["name"]
            if name not in params:
                raise FormatError(f"unknown tensor {name!r} in manifest")
            p = params[name]
            if list(p.shape) != entry["shape"]:
                raise FormatError(f"shape mismatch for {name}: manifest {entry['shape']} vs model {list(p.shape)}")
            raw = blob[entry["offset"]: entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            p.copy_(torch.from_numpy(arr.copy()))
            seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"manifest lacks tensors: {sorted(missing)}")
    model.manifest_extra = manifest.get("extra", {})
    return model


# ---------------------------------------------------------------------------
# prediction


def standardize_by_support(Xs: np.ndarray, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = Xs.mean(axis=0)
    sd = Xs.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (Xs - mu) / sd, (Xq - mu) / sd


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(X.shape[0], -1) if X.ndim != 2 else X


def _query_chunks(n_query: int, size: int):
    for start in range(0, n_query, size):
        yield start, min(n_query, start + size)


@torch.no_grad()
def _predict_raw(model: ICLModel, Xs, ys, Xq, task: str, seed: int, chunk: int = 1024):
    Xs, Xq = _as_matrix(Xs), _as_matrix(Xq)
    model.check_caps(Xs.shape[0] + min(Xq.shape[0], chunk), Xs.shape[1])
    Xs_z, Xq_z = standardize_by_support(Xs, Xq)
    pert = tok.sample_perturbations(Xs.shape[1], model.cfg.k_src, model.W, seed)
    logits, scalars = [], []
    for a, b in _query_chunks(Xq.shape[0], chunk):
        ctx = tok.build_context(Xs_z, ys, Xq_z[a:b], model, seed, task=task, perturbations=pert)
        lg, sc, _ = model(ctx)
        logits.append(lg)
        scalars.append(sc)
    if not logits:
        return torch.zeros(0, MAX_CLASSES), torch.zeros(0)
    return torch.cat(logits), torch.cat(scalars)


def predict_classification(support_X, support_y, query_X, n_classes: int, model: ICLModel, seed: int = 0) -> np.ndarray:
    """Class probabilities ``(N_Q, n_classes)`` from the first ``n_classes`` logits."""
    if n_classes > MAX_CLASSES:
        raise CapacityError(
            f"{n_classes} classes exceed the {MAX_CLASSES}-class readout; "
            "use a many-class strategy (--strategy star, dpt or ecoc)"
        )
    ys = np.asarray(support_y).astype(np.int64)
    if ys.size and (ys.min() < 0 or ys.max() >= n_classes):
        raise ContractError("support labels must lie in [0, n_classes)")
    if ys.size and ys.min() == ys.max():
        # the prior always shows every class, so a one-class support is off-distribution
        probs = np.zeros((_as_matrix(query_X).shape[0], n_classes))
        probs[:, ys[0]] = 1.0
        return probs
    logits, _ = _predict_raw(model, support_X, ys, query_X, "classification", seed)
    return softmax(logits[:, :n_classes].double(), axis=-1).numpy()


def class_probabilities_10(logits: torch.Tensor, n_classes: int) -> torch.Tensor:
    """Masked softmax over the 10-way readout; entries ``>= n_classes`` are exactly 0."""
    mask = torch.arange(MAX_CLASSES) < n_classes
    return softmax(logits.masked_fill(~mask, float("-inf")), axis=-1)


def predict_regression(support_X, support_y, query_X, model: ICLModel, seed: int = 0) -> np.ndarray:
    """Scalar predictions de-normalized with the support target mean and std."""
    y = np.asarray(support_y, dtype=np.float64)
    mu, sd = float(y.mean()), float(y.std())
    n_query = _as_matrix(query_X).shape[0]
    if not sd > 1e-12 * max(1.0, abs(mu)):
        return np.full(n_query, mu)
    _, scalars = _predict_raw(model, support_X, (y - mu) / sd, query_X, "regression", seed)
    return scalars.double().numpy() * sd + mu


@torch.no_grad()
def extract_label_activations(ctx: ContextTensor, model: ICLModel, layer: int) -> torch.Tensor:
    """Label-slot vectors after block ``layer`` for every row (``layer=0``: input)."""
    if not 0 <= layer <= model.cfg.depth:
        raise ContractError(f"layer {layer} outside 0..{model.cfg.depth}")
    h = ctx.values.unsqueeze(0)
    if layer == 0:
        return h[0, :, -1, :].clone()
    for block in model.blocks[:layer]:
        h, _ = block(h, ctx.n_support)
    return h[0, :, -1, :].clone()
