import json

import numpy as np
import pytest
import torch

from dualtab import prior
from dualtab.errors import ContractError, TaskGenerationError, TrainingError
from dualtab.model import ICLModel, load_weights
from dualtab.numerics import derive_seed
from dualtab.prior import (
    FAMILIES,
    ScmTaskSpec,
    TrainConfig,
    eval_synthetic,
    model_grad_check,
    pretrain,
    sample_scm_task,
    smoothed,
    write_loss_trace,
)
from tests.conftest import TINY

FAST = dict(batch_size=2, support_range=(8, 12), n_query=4, max_features=3, log_every=1)


def test_same_seed_same_task():
    a = sample_scm_task(FAMILIES["default"], 42)
    b = sample_scm_task(FAMILIES["default"], 42)
    assert np.array_equal(a.dataset.X, b.dataset.X)
    assert np.array_equal(a.dataset.y, b.dataset.y)
    assert not np.array_equal(a.dataset.X, sample_scm_task(FAMILIES["default"], 43).dataset.X)


def test_binary_labels_are_median_indicator():
    for seed in range(10):
        task = sample_scm_task(FAMILIES["easy"], seed)
        t = task.target_values
        assert np.array_equal(task.dataset.y, (t > np.median(t)).astype(int))


def test_multiclass_bins_are_quantiles():
    task = sample_scm_task(FAMILIES["default"], 3, n_classes=5)
    counts = np.bincount(task.dataset.y, minlength=5)
    assert counts.sum() == task.dataset.n
    assert counts.max() - counts.min() <= 5


def test_dag_is_acyclic_and_sizes_respected():
    for seed in range(20):
        task = sample_scm_task(FAMILIES["default"], seed)
        for j, parents in enumerate(task.parents):
            assert all(p < j for p in parents)
        assert 1 <= task.dataset.d <= 16
        assert 2 <= task.dataset.n_classes <= 10
        assert task.target_node not in task.feature_nodes
        assert task.dataset.n == task.n_support + 64


def test_edge_probability_zero_means_no_edges():
    task = sample_scm_task(FAMILIES["independent"], 5)
    assert all(not p for p in task.parents)


def test_explicit_shapes():
    task = sample_scm_task(FAMILIES["regression"], 1, d=5, n_support=30, n_query=7)
    assert task.dataset.X.shape == (37, 5)
    assert task.support[0].shape == (30, 5)
    assert task.query[0].shape == (7, 5)


def test_degenerate_target_gives_up(monkeypatch):
    def constant(spec, gen, d, C, n):
        return np.zeros((n, 2)), np.zeros(n, dtype=int), np.zeros(n), 2, [[], []], [0, 1], 0
    monkeypatch.setattr(prior, "_sample_once", constant)
    with pytest.raises(TaskGenerationError) as err:
        sample_scm_task(FAMILIES["default"], 77)
    assert err.value.seed == 77


def test_spec_validation():
    with pytest.raises(ContractError):
        ScmTaskSpec(features=(1, 40))
    with pytest.raises(ContractError):
        ScmTaskSpec(classes=(2, 11))
    with pytest.raises(ContractError):
        ScmTaskSpec(nonlinearities=("relu",))


def test_lr_schedule():
    cfg = TrainConfig(steps=1000, warmup=100, lr=1e-3, min_lr_frac=0.05)
    assert cfg.lr_at(50) == pytest.approx(5e-4)
    assert cfg.lr_at(100) == pytest.approx(1e-3)
    assert cfg.lr_at(1000) == pytest.approx(5e-5)
    lrs = [cfg.lr_at(s) for s in range(100, 1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_zero_steps_returns_init():
    cfg = TrainConfig(steps=0, **FAST)
    res = pretrain(cfg, TINY)
    assert res.losses == []
    assert res.model.fingerprint() == ICLModel(TINY, seed=derive_seed(0, "model-init")).fingerprint()


def test_training_is_deterministic(tmp_path):
    cfg = TrainConfig(steps=3, checkpoint_every=2, **FAST)
    a = pretrain(cfg, TINY, out_dir=tmp_path)
    b = pretrain(cfg, TINY)
    assert a.model.fingerprint() == b.model.fingerprint()
    assert a.losses == b.losses
    assert len(a.losses) == 3 and all(np.isfinite(a.losses))
    (ckpt,) = a.checkpoints
    manifest = json.loads(ckpt.read_text())
    assert manifest["extra"]["step"] == 2
    assert manifest["extra"]["train_config"]["steps"] == 3
    assert load_weights(ckpt).cfg == TINY


def test_training_changes_weights():
    res = pretrain(TrainConfig(steps=2, **FAST), TINY)
    assert res.model.fingerprint() != ICLModel(TINY, seed=derive_seed(0, "model-init")).fingerprint()


def test_nonfinite_loss_aborts(monkeypatch):
    def bad(model, batch, n_s):
        return torch.full((batch[0].shape[0],), float("nan"), requires_grad=True)
    monkeypatch.setattr(prior, "batch_loss", bad)
    with pytest.raises(TrainingError) as err:
        pretrain(TrainConfig(steps=2, **FAST), TINY)
    assert err.value.task_seed == derive_seed(0, "train-task", 1 * 2 + 0)


def test_batches_share_shapes():
    cfg = TrainConfig()
    tasks, n_s, d = prior._batch_tasks(cfg, 17)
    assert len(tasks) == cfg.batch_size
    for task, _, _ in tasks:
        assert task.dataset.d == d
        assert task.n_support == n_s


def test_eval_seeds_disjoint_from_training():
    cfg = TrainConfig()
    train = {derive_seed(cfg.seed, "train-task", i) for i in range(40000)}
    held = {derive_seed(cfg.seed, "eval-task", i) for i in range(1000)}
    assert not train & held


def test_eval_perfect_and_majority():
    perfect = eval_synthetic(lambda sx, sy, qx, task: task.query[1], "easy", 10, seed=0)
    assert perfect.mean == 1.0 and perfect.stderr == 0.0
    majority = eval_synthetic(lambda sx, sy, qx, task: np.full(len(qx), np.bincount(sy).argmax()), "easy", 60, seed=0)
    lo, hi = majority.interval95
    assert lo - 0.05 <= 0.5 <= hi + 0.05


def test_eval_regression_reports_rmse():
    res = eval_synthetic(lambda sx, sy, qx, task: np.full(len(qx), sy.mean()), "regression", 5, seed=1)
    assert 0.5 < res.mean < 2.0


def test_loss_trace_and_smoothing(tmp_path):
    write_loss_trace([3.0, 2.0, 1.0], tmp_path / "trace.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines() == ["step,loss", "1,3.0", "2,2.0", "3,1.0"]
    s = smoothed(np.arange(10.0), window=4)
    assert s[3] == pytest.approx(1.5)
    assert s[9] == pytest.approx(7.5)


def test_config_from_json(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"steps": 7, "model": {"k": 8, "k_src": 4, "heads": 2, "depth": 1}}))
    cfg = TrainConfig.from_json(tmp_path / "c.json")
    assert cfg.steps == 7 and cfg.model.depth == 1


def test_model_grad_check_small_model():
    assert model_grad_check(ICLModel(TINY, seed=0), seed=1, n_coords=32) <= 1e-4
