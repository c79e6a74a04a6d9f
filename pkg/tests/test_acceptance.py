"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; a summary section is printed at the end of any run either way.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
import torch

from dualtab import tokenizer as tok
from dualtab.cli import main as cli_main
from dualtab.dataset import kfold_partition
from dualtab.harness.stats import average_rank, holm, one_sided_sign_test, pama, wilcoxon_signed_rank
from dualtab.harness.suite import BUNDLED
from dualtab.introspection import (
    attention_stability,
    attention_summary,
    linear_probe,
    lofo_embeddings,
    vanilla_embeddings,
)
from dualtab.model import (
    DEFAULT_WEIGHTS,
    ICLModel,
    ModelConfig,
    class_probabilities_10,
    load_weights,
    save_weights,
)
from dualtab.numerics import derive_seed
from dualtab.predictors import ICLPredictor
from dualtab.prior import FAMILIES, TrainConfig, eval_synthetic, model_grad_check, pretrain, sample_scm_task
from dualtab.predictors import KnnPredictor
from dualtab.strategies import (
    LargeScalePlan,
    decimal_decode,
    decimal_encode,
    large_scale_predict,
    many_class_predict,
    n_digits,
    random_permutation,
    star_members,
    subspace_ensemble_predict,
)
from tests.conftest import record_criterion
from tests.oracles import average_rank_oracle, holm_oracle, pama_oracle, signflip_p

EVAL_SEED = 20240601


@pytest.fixture(scope="module")
def default_model(tmp_path_factory):
    if DEFAULT_WEIGHTS.with_suffix(".json").exists():
        return load_weights("default")
    # no shipped checkpoint: train one with the default configuration
    result = pretrain(TrainConfig())
    stem = tmp_path_factory.mktemp("weights") / "default"
    save_weights(result.model, stem)
    return load_weights(stem)


def paired_sign_test(ours, theirs):
    wins = sum(a > b for a, b in zip(ours, theirs))
    losses = sum(a < b for a, b in zip(ours, theirs))
    return wins, losses, one_sided_sign_test(wins, losses)


# ---------------------------------------------------------------------------


def test_criterion_1_in_context_learning(default_model):
    def accuracy(model):
        base = ICLPredictor(model)
        return eval_synthetic(
            lambda sx, sy, qx, task: base(sx, sy, qx, "classification", 2, task.seed).labels, "easy", 200, EVAL_SEED
        ).mean

    knn = KnnPredictor(5)
    trained = accuracy(default_model)
    untrained = accuracy(ICLModel(ModelConfig(), seed=0))
    knn_acc = eval_synthetic(lambda sx, sy, qx, task: knn(sx, sy, qx, "classification", 2).labels,
                             "easy", 200, EVAL_SEED).mean
    ok = trained >= 0.85 and trained >= untrained + 0.25 and knn_acc - trained <= 0.10
    detail = f"trained {trained:.4f}, untrained {untrained:.4f}, knn {knn_acc:.4f} (gap {knn_acc - trained:+.4f})"
    manifest = DEFAULT_WEIGHTS.parent / "default.manifest.json"
    if manifest.exists():
        detail += f", pretrain wall clock {json.loads(manifest.read_text())['wall_clock_seconds'] / 60:.1f} min"
    assert record_criterion(1, ok, detail)


def test_criterion_2_invariances(default_model):
    started = time.time()
    m = default_model
    worst = {"support": 0.0, "query": 0.0, "feature": 0.0, "mask": 0.0}
    with torch.no_grad():
        for t in range(10):
            task = sample_scm_task(FAMILIES["default"], derive_seed(EVAL_SEED, "invariance", t))
            sx, sy = task.support
            qx = task.query[0][:8]
            d = sx.shape[1]
            pert = tok.sample_perturbations(d, m.cfg.k_src, m.W, t)
            ctx = tok.build_context(sx, sy, qx, m, t, perturbations=pert)
            base, _, _ = m(ctx)
            scale = float(base.abs().max())
            gen = np.random.default_rng(t)
            for _ in range(100):
                p = gen.permutation(len(sx))
                out, _, _ = m(tok.build_context(sx[p], sy[p], qx, m, t, perturbations=pert))
                worst["support"] = max(worst["support"], float((out - base).abs().max()) / scale)
            for i in range(len(qx)):
                alone, _, _ = m(tok.build_context(sx, sy, qx[i:i + 1], m, t, perturbations=pert))
                worst["query"] = max(worst["query"], float((alone[0] - base[i]).abs().max()))
            order = gen.permutation(d)
            moved, _, _ = m(tok.build_context(sx[:, order], sy, qx[:, order], m, t, perturbations=pert.permuted(order)))
            worst["feature"] = max(worst["feature"], float((moved - base).abs().max()) / scale)
            for C in range(2, 11):
                P = class_probabilities_10(base, C)
                leak = float(P[:, C:].abs().max()) if C < 10 else 0.0
                worst["mask"] = max(worst["mask"], float((P.sum(-1) - 1).abs().max()), leak)
    runtime = time.time() - started
    ok = (worst["support"] <= 1e-4 and worst["query"] <= 1e-5 and worst["feature"] <= 1e-4
          and worst["mask"] <= 1e-6 and runtime <= 300)
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {runtime:.0f}s"
    assert record_criterion(2, ok, detail)


def test_criterion_3_gradient_check(default_model):
    started = time.time()
    err = model_grad_check(default_model, seed=0, n_coords=64)
    runtime = time.time() - started
    assert record_criterion(3, err <= 1e-4 and runtime <= 300, f"max relative error {err:.3e} over 64 coordinates, {runtime:.0f}s")


def test_criterion_4_codecs():
    started = time.time()
    bad = 0
    for C in range(2, 1001):
        t = max(1, math.ceil(math.log10(C) - 1e-12))
        codes = set()
        for y in range(C):
            code = decimal_encode(y, C)
            bad += len(code) != t or decimal_decode(code, C) != y
            codes.add(tuple(code))
        bad += len(codes) != C
        perm = random_permutation(C, C)
        bad += sorted(perm.tolist()) != list(range(C))
    ok = (bad == 0 and star_members(16) == 4 and n_digits(15) == 2 and decimal_encode(13, 15) == [1, 3]
          and time.time() - started <= 60)
    assert record_criterion(4, ok, f"{bad} violations over C in [2, 1000], {time.time() - started:.0f}s")


# -- divide and conquer -----------------------------------------------------------

def wide_task(seed):
    """Binary task: 8 informative columns scattered among 128."""
    g = np.random.default_rng(seed)
    n = 400
    y = np.arange(n) % 2
    X = g.normal(size=(n, 128))
    cols = g.choice(128, 8, replace=False)
    X[:, cols] += (2 * y[:, None] - 1) * 1.0
    return X[:200], y[:200], X[200:], y[200:]


def fifteen_class_task(seed):
    g = np.random.default_rng(seed)
    C, n = 15, 600
    y = np.arange(n) % C
    X = (g.normal(size=(C, 4)) * 2.0)[y] + g.normal(size=(n, 4))
    p = g.permutation(n)
    X, y = X[p], y[p]
    return X[:300], y[:300], X[300:], y[300:]


def xor_task(seed, cap):
    g = np.random.default_rng(seed)
    n = 4 * cap
    X = g.uniform(-1, 1, size=(n + 200, 3))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    return X[:n], y[:n], X[n:], y[n:]


def test_criterion_5_divide_and_conquer(default_model):
    base = ICLPredictor(default_model)
    seeds = range(10)
    acc = lambda out, y: float(np.mean(out.labels == y))
    results = {}

    ens, single = [], []
    for s in seeds:
        Xtr, ytr, Xte, yte = wide_task(3000 + s)
        ens.append(acc(subspace_ensemble_predict(Xtr, ytr, Xte, 16, s, base, "classification", 2), yte))
        single.append(acc(base(Xtr[:, :16], ytr, Xte[:, :16], "classification", 2, s), yte))
    results["a"] = (ens, single)

    star, dpt = [], []
    for s in seeds:
        Xtr, ytr, Xte, yte = fifteen_class_task(4000 + s)
        star.append(acc(many_class_predict(Xtr, ytr, Xte, 15, "star", s, base), yte))
        dpt.append(acc(many_class_predict(Xtr, ytr, Xte, 15, "dpt", s, base), yte))
    results["b"] = (star, dpt)

    cap = LargeScalePlan("b").cap
    forest, capped = [], []
    for s in seeds:
        Xtr, ytr, Xte, yte = xor_task(5000 + s, cap)
        forest.append(acc(large_scale_predict(Xtr, ytr, Xte, LargeScalePlan("df", cap=cap, forest_size=8), s, base,
                                              "classification", 2), yte))
        capped.append(acc(large_scale_predict(Xtr, ytr, Xte, LargeScalePlan("b", cap=cap, repetitions=1), s, base,
                                              "classification", 2), yte))
    results["c"] = (forest, capped)

    parts, ok = [], True
    for key, (ours, theirs) in results.items():
        w, l, p = paired_sign_test(ours, theirs)
        ok &= p <= 0.05
        parts.append(f"({key}) {np.mean(ours):.3f} vs {np.mean(theirs):.3f}, {w}W/{l}L p={p:.4f}")
    assert record_criterion(5, ok, "; ".join(parts))


# -- embeddings ----------------------------------------------------------------------

def test_criterion_6_embeddings(default_model):
    m = default_model
    partition_ok = True
    for n, folds in [(10, 10), (37, 10), (128, 10), (50, 7)]:
        labels = np.arange(n) % 2
        parts = kfold_partition(np.arange(n), folds, 1, labels)
        flat = np.concatenate(parts)
        partition_ok &= len(flat) == n and len(set(flat.tolist())) == n

    lofo, vanilla, direct = [], [], []
    for t in range(20):
        task = sample_scm_task(FAMILIES["easy"], derive_seed(EVAL_SEED, "embedding-task", t))
        (sx, sy), (qx, qy) = task.support, task.query
        C = task.dataset.n_classes
        lo = lofo_embeddings(sx, sy, qx, m, folds=10, layer=m.cfg.depth, seed=t)
        # every training row is a query exactly once
        partition_ok &= sorted(lo.folds[lo.split == "train"].tolist()) == sorted(
            np.concatenate([[f] * len(q) for f, q in enumerate(kfold_partition(np.arange(len(sx)), 10, t, sy))]).tolist())
        va = vanilla_embeddings(sx, sy, qx, m, layer=m.cfg.depth, seed=t)
        lofo.append(linear_probe(lo.part("train"), sy, lo.part("test"), qy, C))
        vanilla.append(linear_probe(va.part("train"), sy, va.part("test"), qy, C))
        direct.append(float(np.mean(ICLPredictor(m)(sx, sy, qx, "classification", C, t).labels == qy)))
    wins = sum(a >= b for a, b in zip(lofo, vanilla))
    ok = partition_ok and wins >= 15 and np.mean(lofo) >= np.mean(direct) - 0.05
    detail = (f"partition {'ok' if partition_ok else 'broken'}, lofo {np.mean(lofo):.3f} >= vanilla "
              f"{np.mean(vanilla):.3f} on {wins}/20, direct {np.mean(direct):.3f}")
    assert record_criterion(6, ok, detail)


# -- statistics ----------------------------------------------------------------------

def test_criterion_7_statistics():
    started = time.time()
    g = np.random.default_rng(EVAL_SEED)
    mismatches = 0
    for i in range(100):
        n = 1 + i % 12
        a, b = g.integers(0, 6, size=n) / 5, g.integers(0, 6, size=n) / 5  # coarse grid: ties and zeros
        mismatches += abs(wilcoxon_signed_rank(a - b).p_value - signflip_p((a - b).tolist())) > 1e-12
    holm_bad = 0
    for _ in range(1000):
        p = g.uniform(0, 0.2, size=g.integers(1, 20))
        a1, a2 = sorted(g.uniform(0.001, 0.2, size=2))
        r1, r2 = holm(p, a1), holm(p, a2)
        holm_bad += bool(np.any(r1 & ~r2)) or r1.tolist() != holm_oracle(p.tolist(), a1)
    hand = [
        [[0.9, 0.8], [0.5, 0.4], [0.1, 0.2]],
        [[0.9, 0.8], [0.9, 0.4], [0.1, 0.2]],
        [[0.9, 0.2], [0.7, 0.8], [0.9, 0.1]],
        [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
    ]
    table_bad = 0
    for s in hand:
        table_bad += not np.allclose(average_rank(s), average_rank_oracle(s))
        table_bad += not np.allclose(pama(s), [float(v) for v in pama_oracle(s)])
    table_bad += pama(hand[0]).tolist() != [1.0, 0.0, 0.0]
    runtime = time.time() - started
    ok = mismatches == 0 and holm_bad == 0 and table_bad == 0 and runtime <= 300
    assert record_criterion(7, ok, f"wilcoxon mismatches {mismatches}/100, holm violations {holm_bad}/1000, "
                                   f"hand-table mismatches {table_bad}, {runtime:.0f}s")


# -- introspection -------------------------------------------------------------------

def test_criterion_8_introspection(default_model):
    task = sample_scm_task(FAMILIES["easy"], derive_seed(EVAL_SEED, "attention-task", 0))
    sx, sy = task.support
    summary = attention_summary(sx, sy, default_model, seed=0)
    row_err = max(float(np.abs(mp.sum(1) - 1).max()) for mp in summary.maps.values())
    same = attention_stability(sx, sy, default_model, layer=default_model.cfg.depth, seeds=[7] * 3)
    report = attention_stability(sx, sy, default_model, layer=default_model.cfg.depth, runs=10, seed=0)
    ok = row_err <= 1e-5 and same.cosines == [1.0, 1.0, 1.0] and len(report.cosines) == 45
    assert record_criterion(8, ok, f"row-sum error {row_err:.1e}, identical-seed cosines {same.cosines}, "
                                   f"10-run mean cosine {report.mean:.4f} (var {report.variance:.2e}, observational)")


# -- determinism ----------------------------------------------------------------------

def test_criterion_9_bench_determinism(default_model, tmp_path):
    started = time.time()
    outs = [tmp_path / "first.json", tmp_path / "second.json"]
    codes = [cli_main(["--threads", "1", "bench", "--suite", str(BUNDLED), "--methods", "icl,knn", "--seeds", "5",
                       "--model", "default", "--out", str(o)]) for o in outs]
    runtime = time.time() - started
    hashes = [json.loads(open(str(o) + ".manifest.json").read())["config_hash"] for o in outs]
    identical = outs[0].read_bytes() == outs[1].read_bytes()
    cells = len(json.loads(outs[0].read_text())["cells"])
    ok = codes == [0, 0] and identical and hashes[0] == hashes[1] and cells == 2 * 6 * 5 and runtime <= 600
    assert record_criterion(9, ok, f"byte-identical {identical}, {cells} cells, manifest hashes equal "
                                   f"{hashes[0] == hashes[1]}, {runtime:.0f}s for both runs")
