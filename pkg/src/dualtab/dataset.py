"""Loading, encoding, standardizing and splitting tabular datasets."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, SplitError
from .numerics import RngStream

MISSING = {"", "na", "nan", "null", "none", "?"}
TASKS = ("classification", "regression")


@dataclass
class TabularDataset:
    """Feature matrix plus targets.

    ``X`` is float64 once every categorical column is encoded; before that it
    is an object array holding floats and category strings.  Classification
    labels are integers in ``[0, n_classes)``.
    """

    X: np.ndarray
    y: np.ndarray
    task: str
    categorical: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    n_classes: int = 0
    class_names: list | None = None
    name: str = ""
    labelled: bool = True

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ContractError(f"X must be a non-empty matrix, got shape {self.X.shape}")
        if len(self.y) != self.X.shape[0]:
            raise ContractError("X and y disagree on the number of rows")
        if self.task not in TASKS:
            raise FormatError(f"unknown task kind {self.task!r}")
        if not self.categorical:
            self.categorical = [False] * self.X.shape[1]
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.X.shape[1])]
        if self.task == "classification":
            self.y = np.asarray(self.y, dtype=np.int64)
            if not self.n_classes:
                self.n_classes = int(self.y.max()) + 1
            if self.y.min() < 0 or self.y.max() >= self.n_classes:
                raise ContractError("labels outside [0, n_classes)")
        else:
            self.y = np.asarray(self.y, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_encoded(self) -> bool:
        return self.X.dtype != object

    def subset(self, rows) -> "TabularDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, X=self.X[rows], y=self.y[rows])

    def with_columns(self, cols) -> "TabularDataset":
        cols = list(cols)
        return replace(
            self,
            X=self.X[:, cols],
            categorical=[self.categorical[j] for j in cols],
            columns=[self.columns[j] for j in cols],
        )


# ---------------------------------------------------------------------------
# IO


def _parse_cell(text: str):
    text = text.strip()
    if text.lower() in MISSING:
        return math.nan
    try:
        return float(text)
    except ValueError:
        return text


def load_dataset(csv_path, meta_path, target_optional: bool = False) -> TabularDataset:
    """Read ``data.csv`` + ``meta.json``; with ``target_optional`` a file without the
    target column loads with placeholder targets and ``labelled=False``."""
    meta = json.loads(Path(meta_path).read_text())
    target = meta.get("target")
    task = meta.get("task")
    if task not in TASKS:
        raise FormatError(f"unknown task kind {task!r} in {meta_path}")
    cat_cols = set(meta.get("categorical", []))

    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{csv_path} is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{csv_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append(row)
    header = [h.strip() for h in header]
    labelled = target in header
    if not labelled and target_optional:
        header = header + [target]
        rows = [row + ["0"] for row in rows]
    if target not in header:
        raise FormatError(f"target column {target!r} not in header of {csv_path}")
    unknown = cat_cols - set(header)
    if unknown:
        raise FormatError(f"categorical columns not in header: {sorted(unknown)}")
    if not rows:
        raise FormatError(f"{csv_path} has no data rows")

    t_idx = header.index(target)
    feat_idx = [j for j in range(len(header)) if j != t_idx]
    columns = [header[j] for j in feat_idx]
    categorical = [c in cat_cols for c in columns]

    X = np.empty((len(rows), len(feat_idx)), dtype=object)
    for i, row in enumerate(rows):
        for out_j, j in enumerate(feat_idx):
            cell = row[j].strip()
            if categorical[out_j]:
                X[i, out_j] = None if cell.lower() in MISSING else cell
            else:
                val = _parse_cell(cell)
                if isinstance(val, str):
                    raise FormatError(f"non-numeric value {val!r} in numeric column {columns[out_j]!r}")
                X[i, out_j] = val
    if not any(categorical):
        X = X.astype(np.float64)

    raw_y = [row[t_idx].strip() for row in rows]
    if task == "classification":
        y, names = _encode_labels(raw_y)
        n_classes = len(names)
    else:
        try:
            y = np.array([float(v) for v in raw_y])
        except ValueError as exc:
            raise FormatError(f"non-numeric regression target: {exc}") from exc
        names, n_classes = None, 0
    if not labelled:
        names = None
    return TabularDataset(X, y, task, categorical, columns, n_classes, names, Path(csv_path).parent.name, labelled)


def align_labels(ds: TabularDataset, class_names: list) -> TabularDataset:
    """Re-index ``ds`` labels into another file's class vocabulary."""
    if ds.task != "classification":
        return ds
    if not ds.labelled:
        return replace(ds, y=np.zeros(ds.n, dtype=np.int64), n_classes=len(class_names), class_names=list(class_names))
    lookup = {name: i for i, name in enumerate(class_names)}
    unknown = sorted(set(ds.class_names) - set(lookup))
    if unknown:
        raise FormatError(f"labels {unknown} do not occur in the training file")
    y = np.array([lookup[ds.class_names[v]] for v in ds.y], dtype=np.int64)
    return replace(ds, y=y, n_classes=len(class_names), class_names=list(class_names))


def _encode_labels(raw):
    try:
        vals = [float(v) for v in raw]
        if all(v.is_integer() for v in vals):
            ints = sorted({int(v) for v in vals})
            if ints == list(range(len(ints))):
                return np.array([int(v) for v in vals]), [str(i) for i in ints]
            lookup = {v: i for i, v in enumerate(ints)}
            return np.array([lookup[int(v)] for v in vals]), [str(v) for v in ints]
        keys = sorted(set(vals))
        lookup = {v: i for i, v in enumerate(keys)}
        return np.array([lookup[v] for v in vals]), [repr(v) for v in keys]
    except ValueError:
        keys = sorted(set(raw))
        lookup = {v: i for i, v in enumerate(keys)}
        return np.array([lookup[v] for v in raw]), keys


def write_dataset(ds: TabularDataset, csv_path, meta_path, target: str = "target") -> None:
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.columns) + [target])
        for i in range(ds.n):
            cells = [_fmt(v) for v in ds.X[i]]
            yv = ds.y[i]
            label = ds.class_names[int(yv)] if (ds.task == "classification" and ds.class_names) else _fmt(yv)
            w.writerow(cells + [label])
    meta = {
        "target": target,
        "task": ds.task,
        "categorical": [c for c, flag in zip(ds.columns, ds.categorical) if flag and not ds.is_encoded],
    }
    meta_path.write_text(json.dumps(meta, indent=2))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class PreprocessStats:
    mean: np.ndarray
    std: np.ndarray
    categories: dict = field(default_factory=dict)  # column index -> list of categories

    def __post_init__(self):
        self.std = np.where(self.std > 0, self.std, 1.0)


def fit_categories(train: TabularDataset) -> dict:
    """Category tables in first-appearance order over the training rows."""
    tables = {}
    for j, flag in enumerate(train.categorical):
        if not flag:
            continue
        seen = {}
        for v in train.X[:, j]:
            key = "<missing>" if v is None else v
            if key not in seen:
                seen[key] = len(seen)
        tables[j] = list(seen)
    return tables


def encode_categoricals(ds: TabularDataset, mode: str = "ordinal", tables: dict | None = None) -> tuple[TabularDataset, dict]:
    """Encode symbolic columns; unseen categories map to ordinal ``v`` or all-zeros."""
    if mode not in ("ordinal", "one-hot"):
        raise ContractError(f"unknown encoding mode {mode!r}")
    if tables is None:
        tables = fit_categories(ds)
    for j in tables:
        if ds.is_encoded or not ds.categorical[j]:
            raise ContractError(f"column {ds.columns[j]!r} is already numeric")
    cols, names, flags = [], [], []
    for j in range(ds.d):
        col = ds.X[:, j]
        if j not in tables:
            cols.append(np.array([math.nan if v is None else float(v) for v in col], dtype=np.float64)[:, None])
            names.append(ds.columns[j])
            flags.append(ds.categorical[j])
            continue
        lookup = {c: i for i, c in enumerate(tables[j])}
        codes = np.array([lookup.get("<missing>" if v is None else v, len(lookup)) for v in col])
        if mode == "ordinal":
            cols.append(codes.astype(np.float64)[:, None])
            names.append(ds.columns[j])
            flags.append(True)
        else:
            onehot = np.zeros((ds.n, len(lookup)))
            hit = codes < len(lookup)
            onehot[np.nonzero(hit)[0], codes[hit]] = 1.0
            cols.append(onehot)
            names.extend(f"{ds.columns[j]}={c}" for c in tables[j])
            flags.extend([True] * len(lookup))
    X = np.hstack(cols)
    return replace(ds, X=X, columns=names, categorical=flags), tables


def fit_standardizer(train: TabularDataset) -> PreprocessStats:
    if not train.is_encoded:
        raise ContractError("encode categorical columns before fitting standardization")
    X = train.X.astype(np.float64)
    with np.errstate(all="ignore"):
        mean = np.nanmean(X, axis=0)
        mean = np.where(np.isnan(mean), 0.0, mean)
        filled = np.where(np.isnan(X), mean, X)
        std = filled.std(axis=0)
    return PreprocessStats(mean, std)


def standardize(ds: TabularDataset, stats: PreprocessStats) -> TabularDataset:
    """``(x - mean) / std`` with training statistics; missing cells take the training mean."""
    X = ds.X.astype(np.float64)
    X = np.where(np.isnan(X), stats.mean, X)
    return replace(ds, X=(X - stats.mean) / stats.std)


def prepare_split(train: TabularDataset, *others: TabularDataset, mode: str = "ordinal"):
    """Encode and standardize ``train`` and any number of other splits with train-fitted state."""
    tables = None
    if not train.is_encoded:
        train, tables = encode_categoricals(train, mode)
        others = tuple(encode_categoricals(o, mode, tables)[0] for o in others)
    stats = fit_standardizer(train)
    return (standardize(train, stats),) + tuple(standardize(o, stats) for o in others)


# ---------------------------------------------------------------------------
# splitting


def _stratified_order(labels: np.ndarray | None, n: int, gen: np.random.Generator) -> np.ndarray:
    """Seeded row order in which every prefix is close to label-stratified."""
    perm = gen.permutation(n)
    if labels is None:
        return perm
    labels = np.asarray(labels)[perm]
    frac = np.empty(n)
    tiebreak = gen.random(n)
    for c in np.unique(labels):
        pos = np.nonzero(labels == c)[0]
        frac[pos] = (np.arange(len(pos)) + tiebreak[pos]) / len(pos)
    return perm[np.lexsort((labels, frac))]


def split_64_16_20(ds: TabularDataset, seed: int):
    """Seeded train/valid/test split cut at floor(0.64 N) and floor(0.80 N)."""
    n = ds.n
    if n < 5:
        raise SplitError(f"need at least 5 rows to split, got {n}")
    gen = RngStream(seed, "split").generator()
    labels = ds.y if ds.task == "classification" else None
    order = _stratified_order(labels, n, gen)
    a, b = math.floor(0.64 * n), math.floor(0.80 * n)
    idx = order[:a], order[a:b], order[b:]
    if labels is not None:
        missing = set(np.unique(ds.y)) - set(np.unique(ds.y[idx[0]]))
        if missing:
            raise SplitError(f"classes {sorted(missing)} absent from the training split")
    return tuple(np.sort(i) for i in idx)


def kfold_partition(indices, folds: int, seed: int, labels=None) -> list[np.ndarray]:
    """Disjoint folds covering ``indices``; sizes differ by at most one."""
    indices = np.asarray(indices)
    if folds < 2:
        raise ContractError("need at least 2 folds")
    if folds > len(indices):
        raise ContractError(f"{folds} folds for {len(indices)} indices")
    gen = RngStream(seed, "kfold").generator()
    order = _stratified_order(labels, len(indices), gen)
    return [np.sort(indices[order[f::folds]]) for f in range(folds)]
