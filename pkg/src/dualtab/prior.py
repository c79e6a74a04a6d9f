"""Synthetic structural-causal-model tasks and pre-training.

The task family is deliberately small: a random DAG over at most 24 nodes,
ancestral sampling with random linear mixing, a per-node nonlinearity and
Gaussian noise.  Observed nodes become features, one further node becomes the
target (quantile-binned for classification).  None of these hyperparameters
are meant to match any released prior.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import TabularDataset
from .errors import ContractError, TaskGenerationError, TrainingError
from .model import ICLModel, ModelConfig, save_weights, standardize_by_support
from .numerics import Adam, RngStream, derive_seed, float64_mode, grad_check

NONLINEARITIES = {
    "identity": lambda z: z,
    "tanh": lambda z: np.tanh(1.5 * z),
    "square": lambda z: z * z,
    "sign": np.sign,
}


@dataclass
class ScmTaskSpec:
    nodes: tuple = (4, 24)
    edge_prob: float | tuple = (0.2, 0.7)
    nonlinearities: tuple = ("identity", "tanh", "square", "sign")
    noise: tuple = (0.02, 0.5)
    features: tuple = (1, 16)
    classes: tuple = (2, 10)
    n_support: int = 128
    n_query: int = 64
    task: str = "classification"
    # features are drawn from the target's neighbourhood first
    neighbour_features: bool = False

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ContractError(f"unknown task {self.task!r}")
        lo, hi = self.features
        if lo < 1 or hi > 16 or lo > hi:
            raise ContractError("feature count range must lie within 1..16")
        if self.classes[0] < 2 or self.classes[1] > 10:
            raise ContractError("class count range must lie within 2..10")
        if self.nodes[1] > 24 or self.nodes[0] < 2:
            raise ContractError("node count range must lie within 2..24")
        if self.n_support > 512:
            raise ContractError("support size is capped at 512")
        unknown = set(self.nonlinearities) - set(NONLINEARITIES)
        if unknown:
            raise ContractError(f"unknown nonlinearities {sorted(unknown)}")


FAMILIES = {
    "default": ScmTaskSpec(),
    "regression": ScmTaskSpec(task="regression"),
    "easy": ScmTaskSpec(
        nodes=(4, 10), edge_prob=(0.6, 0.9), nonlinearities=("identity", "tanh"),
        noise=(0.02, 0.1), features=(2, 8), classes=(2, 2), n_support=128, n_query=64,
        neighbour_features=True,
    ),
    "independent": ScmTaskSpec(edge_prob=0.0, classes=(2, 2)),
}


@dataclass
class SyntheticTask:
    dataset: TabularDataset
    n_support: int
    target_values: np.ndarray
    parents: list
    feature_nodes: list
    target_node: int
    seed: int

    @property
    def support(self):
        return self.dataset.X[: self.n_support], self.dataset.y[: self.n_support]

    @property
    def query(self):
        return self.dataset.X[self.n_support:], self.dataset.y[self.n_support:]


def _uniform_int(gen, rng):
    lo, hi = rng
    return int(gen.integers(lo, hi + 1))


def _uniform(gen, rng):
    if isinstance(rng, (int, float)):
        return float(rng)
    lo, hi = rng
    return float(gen.uniform(lo, hi))


def _quantile_bins(values: np.ndarray, n_classes: int) -> np.ndarray:
    cuts = np.quantile(values, np.arange(1, n_classes) / n_classes)
    return np.searchsorted(cuts, values, side="left").astype(np.int64) if n_classes > 2 else (values > cuts[0]).astype(np.int64)


def _sample_once(spec: ScmTaskSpec, gen: np.random.Generator, d: int | None, n_classes: int | None, n_rows: int):
    n_nodes = _uniform_int(gen, spec.nodes)
    d = d if d is not None else _uniform_int(gen, spec.features)
    n_nodes = max(n_nodes, d + 1)
    p_edge = _uniform(gen, spec.edge_prob)
    noise = _uniform(gen, spec.noise)

    parents = [[i for i in range(j) if gen.random() < p_edge] for j in range(n_nodes)]
    values = np.zeros((n_rows, n_nodes))
    for j in range(n_nodes):
        eps = gen.standard_normal(n_rows)
        if parents[j]:
            w = gen.standard_normal(len(parents[j])) / math.sqrt(len(parents[j]))
            z = values[:, parents[j]] @ w + 0.3 * gen.standard_normal()
            f = NONLINEARITIES[spec.nonlinearities[gen.integers(len(spec.nonlinearities))]]
            v = f(z) + noise * eps
        else:
            v = eps
        sd = v.std()
        values[:, j] = (v - v.mean()) / (sd if sd > 1e-8 else 1.0)

    if p_edge > 0:
        candidates = [j for j in range(n_nodes) if parents[j]] or list(range(n_nodes))
    else:
        candidates = list(range(n_nodes))
    target = int(candidates[gen.integers(len(candidates))])
    others = [j for j in range(n_nodes) if j != target]
    if spec.neighbour_features:
        near = [j for j in others if j in parents[target] or target in parents[j]]
        far = [j for j in others if j not in near]
        near = list(gen.permutation(near)) if near else []
        far = list(gen.permutation(far)) if far else []
        chosen = (near + far)[:d]
    else:
        chosen = list(gen.choice(others, size=d, replace=False))
    chosen = [int(c) for c in gen.permutation(chosen)]
    X = values[:, chosen]
    t = values[:, target]
    if spec.task == "classification":
        C = n_classes if n_classes is not None else _uniform_int(gen, spec.classes)
        y = _quantile_bins(t, C)
    else:
        C = 0
        y = t.copy()
    return X, y, t, C, parents, chosen, target


def sample_scm_task(
    spec: ScmTaskSpec,
    seed: int,
    d: int | None = None,
    n_classes: int | None = None,
    n_support: int | None = None,
    n_query: int | None = None,
) -> SyntheticTask:
    """Draw one task; every random choice comes from ``RngStream(seed, "scm", attempt)``."""
    n_s = spec.n_support if n_support is None else n_support
    n_q = spec.n_query if n_query is None else n_query
    for attempt in range(10):
        gen = RngStream(seed, "scm", attempt).generator()
        X, y, t, C, parents, chosen, target = _sample_once(spec, gen, d, n_classes, n_s + n_q)
        if spec.task == "classification":
            if len(np.unique(y[:n_s])) < C:
                continue
        elif np.std(y[:n_s]) < 1e-8:
            continue
        ds = TabularDataset(X, y, spec.task, n_classes=C, name=f"scm-{seed}")
        return SyntheticTask(ds, n_s, t, parents, chosen, target, seed)
    raise TaskGenerationError(f"task seed {seed} gave a degenerate target 10 times", seed=seed)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    warmup: int = 250
    min_lr_frac: float = 0.05
    seed: int = 0
    checkpoint_every: int = 1000
    regression_fraction: float = 0.3
    easy_fraction: float = 0.25
    support_range: tuple = (24, 160)
    n_query: int = 32
    max_features: int = 16
    grad_clip: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        self.support_range = tuple(self.support_range)

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to ``min_lr_frac * lr``."""
        if step <= self.warmup:
            return self.lr * step / max(1, self.warmup)
        frac = (step - self.warmup) / max(1, self.steps - self.warmup)
        return self.lr * (self.min_lr_frac + (1 - self.min_lr_frac) * 0.5 * (1 + math.cos(math.pi * min(1.0, frac))))

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text())
        model = data.pop("model", None)
        cfg = cls(**data)
        cfg.model = ModelConfig(**model) if model else ModelConfig()
        return cfg


def _batch_tasks(cfg: TrainConfig, step: int):
    """Tasks for one optimisation step; shapes are shared inside the batch."""
    gen = RngStream(cfg.seed, "batch-shape", step).generator()
    n_s = _uniform_int(gen, cfg.support_range)
    d = _uniform_int(gen, (1, cfg.max_features))
    tasks = []
    for i in range(cfg.batch_size):
        task_seed = derive_seed(cfg.seed, "train-task", step * cfg.batch_size + i)
        tgen = RngStream(task_seed, "kind").generator()
        u = tgen.random()
        if u < cfg.regression_fraction:
            spec = FAMILIES["regression"]
        elif u < cfg.regression_fraction + cfg.easy_fraction:
            spec = replace(FAMILIES["easy"], features=(1, 16))
        else:
            spec = FAMILIES["default"]
        task = sample_scm_task(spec, task_seed, d=d, n_support=n_s, n_query=cfg.n_query)
        tasks.append((task, task_seed, tgen))
    return tasks, n_s, d


def _tensorize(model: ICLModel, tasks, n_s: int, d: int):
    Xs, Xq, ys, yq, C, reg, raw = [], [], [], [], [], [], []
    for task, task_seed, tgen in tasks:
        sx, sy = task.support
        qx, qy = task.query
        sx, qx = standardize_by_support(sx, qx)
        if task.dataset.task == "classification":
            perm = tgen.permutation(task.dataset.n_classes)
            sy, qy = perm[sy], perm[qy]
            C.append(task.dataset.n_classes)
            reg.append(False)
        else:
            mu, sd = sy.mean(), sy.std()
            sy, qy = (sy - mu) / sd, (qy - mu) / sd
            C.append(0)
            reg.append(True)
        Xs.append(sx)
        Xq.append(qx)
        ys.append(sy)
        yq.append(qy)
        raw.append(np.stack([RngStream(task_seed, "attr", j).normal(model.cfg.k_src) for j in range(d)]))
    dt = model.u.dtype
    as_t = lambda a: torch.as_tensor(np.stack(a), dtype=dt)
    return (
        as_t(Xs), as_t(ys), as_t(Xq), as_t(yq),
        torch.as_tensor(C), torch.as_tensor(reg), torch.as_tensor(np.stack(raw), dtype=dt),
    )


def batch_loss(model: ICLModel, batch, n_s: int):
    """Mean query loss: cross-entropy for classification, MSE for regression."""
    Xs, ys, Xq, yq, C, reg, raw = batch
    offsets = raw @ model.W.T
    h = model.embed_batch(Xs, ys, Xq, offsets, reg)
    h, _ = model.run_blocks(h, n_s)
    logits, scalar = model.readout(h[:, n_s:])
    losses = []
    mask = torch.arange(10)[None, :] < C[:, None]
    logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
    for b in range(Xs.shape[0]):
        if reg[b]:
            losses.append(((scalar[b] - yq[b]) ** 2).mean())
        else:
            losses.append(torch.nn.functional.cross_entropy(logits[b], yq[b].long()))
    return torch.stack(losses)


def _clip_(params, max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad.mul_(scale)
    return total


@dataclass
class TrainResult:
    model: ICLModel
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    seconds: float = 0.0


def pretrain(cfg: TrainConfig, model_cfg: ModelConfig | None = None, out_dir=None, log=None) -> TrainResult:
    """Train a fresh model on synthetic tasks.  Deterministic given ``cfg`` in single-thread mode."""
    model_cfg = model_cfg or getattr(cfg, "model", None) or ModelConfig()
    model = ICLModel(model_cfg, seed=derive_seed(cfg.seed, "model-init"))
    params = [p for _, p in sorted(model.named_parameters())]
    opt = Adam(params, lr=cfg.lr)
    result = TrainResult(model)
    start = time.perf_counter()
    provenance = {"train_config": _config_dict(cfg)}
    for step in range(1, cfg.steps + 1):
        tasks, n_s, d = _batch_tasks(cfg, step)
        batch = _tensorize(model, tasks, n_s, d)
        per_task = batch_loss(model, batch, n_s)
        loss = per_task.mean()
        if not torch.isfinite(loss):
            bad = int(torch.nonzero(~torch.isfinite(per_task))[0, 0]) if (~torch.isfinite(per_task)).any() else 0
            raise TrainingError(f"non-finite loss at step {step}", task_seed=tasks[bad][1])
        loss.backward()
        _clip_(params, cfg.grad_clip)
        opt.step(lr=cfg.lr_at(step))
        result.losses.append(float(loss.detach()))
        if log is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            window = result.losses[-cfg.log_every:]
            log(f"step {step:6d}  loss {np.mean(window):.4f}  lr {cfg.lr_at(step):.2e}  {time.perf_counter() - start:.0f}s")
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            path = save_weights(model, Path(out_dir) / f"checkpoint-{step:06d}", extra={**provenance, "step": step})
            result.checkpoints.append(path)
    result.seconds = time.perf_counter() - start
    return result


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["support_range"] = list(cfg.support_range)
    return d


def write_loss_trace(losses, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def smoothed(losses, window: int = 200) -> np.ndarray:
    arr = np.asarray(losses, dtype=np.float64)
    if len(arr) < window:
        return np.cumsum(arr) / np.arange(1, len(arr) + 1)
    c = np.cumsum(np.insert(arr, 0, 0.0))
    out = np.empty(len(arr))
    out[:window] = c[1: window + 1] / np.arange(1, window + 1)
    out[window:] = (c[window + 1:] - c[1:-window]) / window
    return out


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    mean: float
    stderr: float
    values: list

    @property
    def interval95(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr


def eval_synthetic(predict, family: str | ScmTaskSpec, n_tasks: int, seed: int) -> EvalResult:
    """Mean accuracy (classification) or RMSE (regression) over held-out tasks.

    ``predict(support_X, support_y, query_X, task)`` returns labels or values;
    task seeds use the ``"eval-task"`` stream label, disjoint from training.
    """
    spec = FAMILIES[family] if isinstance(family, str) else family
    values = []
    for i in range(n_tasks):
        task = sample_scm_task(spec, derive_seed(seed, "eval-task", i))
        sx, sy = task.support
        qx, qy = task.query
        pred = np.asarray(predict(sx, sy, qx, task))
        if spec.task == "classification":
            values.append(float(np.mean(pred == qy)))
        else:
            values.append(float(np.sqrt(np.mean((pred - qy) ** 2))))
    arr = np.asarray(values)
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return EvalResult(float(arr.mean()), stderr, values)


def model_grad_check(model: ICLModel, seed: int = 0, n_coords: int = 64, n_support: int = 12, d: int = 4) -> float:
    """Central-difference check of the full model on one mixed synthetic batch, in 64-bit mode."""
    cfg = TrainConfig(batch_size=2, seed=seed, support_range=(n_support, n_support), n_query=4,
                      max_features=d, regression_fraction=0.5, easy_fraction=0.0)
    with float64_mode():
        twin = copy.deepcopy(model).double()
        tasks, n_s, d = _batch_tasks(cfg, 1)
        batch = _tensorize(twin, tasks, n_s, d)
        params = [p for _, p in sorted(twin.named_parameters())]
        return grad_check(lambda: batch_loss(twin, batch, n_s).mean(), params, n_coords=n_coords, seed=seed)
