"""The bundled toy benchmark suite: six SCM-drawn datasets written as data.csv + meta.json."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from ..dataset import TabularDataset, write_dataset
from ..numerics import derive_seed
from ..prior import FAMILIES, sample_scm_task

BUNDLED = Path(__file__).resolve().parent.parent / "resources" / "suite"

# name, family, features, classes, rows
LAYOUT = (
    ("cls-binary", "default", 6, 2, 240),
    ("cls-multi", "default", 8, 4, 300),
    ("cls-categorical", "easy", 5, 3, 260),
    ("reg-smooth", "regression", 4, 0, 220),
    ("reg-wide", "regression", 12, 0, 280),
    ("reg-mixed", "regression", 7, 0, 250),
)

LETTERS = "abcdef"


def _to_categorical(ds: TabularDataset, col: int, levels: int) -> TabularDataset:
    """Replace column ``col`` by its quantile bin rendered as a letter."""
    X = ds.X.astype(object)
    vals = ds.X[:, col].astype(np.float64)
    cuts = np.quantile(vals, np.arange(1, levels) / levels)
    X[:, col] = [LETTERS[int(b)] for b in np.searchsorted(cuts, vals)]
    flags = list(ds.categorical)
    flags[col] = True
    return replace(ds, X=X, categorical=flags)


def generate_suite(out_dir=BUNDLED, seed: int = 2024) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for i, (name, family, d, C, rows) in enumerate(LAYOUT):
        spec = replace(FAMILIES[family], classes=(max(2, C), max(2, C)), n_support=rows, n_query=0)
        task = sample_scm_task(spec, derive_seed(seed, "suite", i), d=d, n_classes=C or None)
        ds = replace(task.dataset, columns=[f"f{j}" for j in range(d)], name=name)
        if ds.task == "classification":
            ds = replace(ds, class_names=[f"c{k}" for k in range(ds.n_classes)])
        ds = replace(ds, X=np.round(ds.X, 6))
        if ds.task == "regression":
            ds = replace(ds, y=np.round(ds.y, 6))
        if name in ("cls-categorical", "reg-mixed"):
            ds = _to_categorical(ds, 1, 4)
        target = out_dir / name
        write_dataset(ds, target / "data.csv", target / "meta.json")
        paths.append(target)
    return paths
