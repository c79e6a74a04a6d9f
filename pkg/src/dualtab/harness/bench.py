"""Benchmark protocol: 64/16/20 splits over seeds, per-cell scores, results JSON."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..dataset import TabularDataset, load_dataset, prepare_split, split_64_16_20
from ..errors import ContractError, DualtabError, FormatError, StatisticError
from ..predictors import ICLPredictor, baseline

SCHEMA = 1


@dataclass
class BenchmarkTable:
    methods: list
    datasets: list
    seeds: list
    values: np.ndarray  # (M, D, S); NaN marks a failed cell
    metric: list  # per dataset: "accuracy" or "rmse"
    errors: dict = field(default_factory=dict)  # (m, d, s) -> message

    @property
    def higher_is_better(self) -> np.ndarray:
        return np.array([m == "accuracy" for m in self.metric])

    def seed_means(self, methods=None, datasets=None) -> np.ndarray:
        """``(methods, datasets)`` matrix of seed-averaged scores; refuses failed cells."""
        mi = [self.methods.index(m) for m in (methods or self.methods)]
        di = [self.datasets.index(d) for d in (datasets or self.datasets)]
        block = self.values[np.ix_(mi, di)]
        if not np.isfinite(block).all():
            raise StatisticError("slice contains failed cells")
        return block.mean(axis=2)

    def slice_by_metric(self, metric: str):
        ds = [d for d, m in zip(self.datasets, self.metric) if m == metric]
        return ds

    # -- JSON -------------------------------------------------------------

    def cells(self) -> list:
        out = []
        for mi, m in enumerate(self.methods):
            for di, d in enumerate(self.datasets):
                for si, s in enumerate(self.seeds):
                    cell = {"method": m, "dataset": d, "seed": s, "metric": self.metric[di]}
                    if (mi, di, si) in self.errors:
                        cell["error"] = self.errors[(mi, di, si)]
                    else:
                        cell["value"] = float(self.values[mi, di, si])
                    out.append(cell)
        return out

    def to_json(self, manifest: dict) -> str:
        return json.dumps({"schema": SCHEMA, "cells": self.cells(), "manifest": manifest}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkTable":
        data = json.loads(text)
        if data.get("schema") != SCHEMA:
            raise FormatError(f"unsupported results schema {data.get('schema')!r}")
        cells = data["cells"]
        methods = list(dict.fromkeys(c["method"] for c in cells))
        datasets = list(dict.fromkeys(c["dataset"] for c in cells))
        seeds = list(dict.fromkeys(c["seed"] for c in cells))
        metric = {c["dataset"]: c["metric"] for c in cells}
        values = np.full((len(methods), len(datasets), len(seeds)), np.nan)
        errors = {}
        for c in cells:
            key = (methods.index(c["method"]), datasets.index(c["dataset"]), seeds.index(c["seed"]))
            if "error" in c:
                errors[key] = c["error"]
            else:
                values[key] = c["value"]
        return cls(methods, datasets, seeds, values, [metric[d] for d in datasets], errors)


def load_suite(suite_dir) -> list[TabularDataset]:
    suite_dir = Path(suite_dir)
    dirs = sorted(p for p in suite_dir.iterdir() if p.is_dir())
    if not dirs:
        raise FormatError(f"no dataset directories under {suite_dir}")
    out = []
    for d in dirs:
        ds = load_dataset(d / "data.csv", d / "meta.json")
        ds.name = d.name
        out.append(ds)
    return out


def file_hash(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def make_method(name: str, model=None):
    if name == "icl":
        if model is None:
            raise ContractError("method 'icl' needs model weights (--model)")
        return ICLPredictor(model)
    return baseline(name)


def evaluate_cell(ds: TabularDataset, predictor, seed: int) -> float:
    train_idx, valid_idx, test_idx = split_64_16_20(ds, seed)
    train, valid, test = prepare_split(ds.subset(train_idx), ds.subset(valid_idx), ds.subset(test_idx))
    out = predictor(train.X, train.y, test.X, ds.task, ds.n_classes, seed)
    if ds.task == "classification":
        return float(np.mean(out.labels == test.y))
    return float(math.sqrt(np.mean((out.values - test.y) ** 2)))


def run_benchmark(datasets: list[TabularDataset], methods: list[str], seeds, model=None, threads: int = 1) -> BenchmarkTable:
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    predictors = {m: make_method(m, model) for m in methods}
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ContractError("dataset names must be unique")
    values = np.full((len(methods), len(datasets), len(seeds)), np.nan)
    errors = {}
    jobs = [(mi, di, si) for mi in range(len(methods)) for di in range(len(datasets)) for si in range(len(seeds))]

    def work(job):
        mi, di, si = job
        try:
            return job, evaluate_cell(datasets[di], predictors[methods[mi]], seeds[si]), None
        except DualtabError as exc:
            return job, math.nan, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for job, value, err in results:
        values[job] = value
        if err is not None:
            errors[job] = err
    metric = ["accuracy" if d.task == "classification" else "rmse" for d in datasets]
    return BenchmarkTable(list(methods), names, seeds, values, metric, errors)


def manifest(config: dict, dataset_hashes: dict, seeds) -> dict:
    """Deterministic provenance block; wall-clock goes in the separate run manifest."""
    cfg_text = json.dumps(config, sort_keys=True)
    return {
        "config_hash": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "config": config,
        "dataset_hashes": dict(sorted(dataset_hashes.items())),
        "seeds": list(seeds),
        "versions": {"dualtab": __version__, "numpy": np.__version__},
    }


def write_run_manifest(path, core: dict, started: float, artifacts: list) -> None:
    data = dict(core)
    data.update({
        "wall_clock_seconds": round(time.time() - started, 3),
        "started_unix": round(started, 3),
        "python": platform.python_version(),
        "artifacts": [str(a) for a in artifacts],
    })
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))
