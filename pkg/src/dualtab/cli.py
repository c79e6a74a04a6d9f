"""Command-line entry point: ``dualtab <command> ...``.

Exit status is 0 on success, 2 on usage errors and 1 when a module contract is
violated (the error text is printed to stderr).  Every command writes one run
manifest next to its output, ``<out>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import align_labels, load_dataset, prepare_split, split_64_16_20
from .errors import ContractError, DualtabError, NumericError
from .harness import bench, stats
from .introspection import (
    attention_stability,
    attention_summary,
    lofo_embeddings,
    token_pca_projection,
    unsupervised_embeddings,
    vanilla_embeddings,
    write_attention_csv,
    write_embeddings_csv,
    write_projection_csv,
)
from .model import load_weights, save_weights
from .numerics import set_threads
from .predictors import ICLPredictor, baseline
from .prior import TrainConfig, model_grad_check, pretrain, write_loss_trace
from .strategies import (
    LargeScalePlan,
    large_scale_predict,
    many_class_predict,
    pca_bagging_predict,
    subspace_ensemble_predict,
)

STRATEGIES = ("subspace", "pca-bag", "dpt", "star", "ecoc", "b", "k", "dt", "df", "sq")
EMBED_MODES = ("vanilla", "lofo", "dummy", "permute")
F64_TOLERANCE = 1e-4


def _manifest_path(out) -> Path:
    return Path(str(out) + ".manifest.json")


def _meta_for(path: Path) -> Path:
    """``<stem>.meta.json`` next to a CSV, else ``meta.json`` in its directory."""
    if path.is_dir():
        return path / "meta.json"
    own = path.with_suffix(".meta.json")
    return own if own.exists() else path.parent / "meta.json"


def _load(path, target_optional=False):
    path = Path(path)
    csv_path = path / "data.csv" if path.is_dir() else path
    meta = _meta_for(path)
    ds = load_dataset(csv_path, meta, target_optional=target_optional)
    return ds, [bench.file_hash(csv_path, meta)]


def _layers(text):
    if text is None:
        return None
    parts = [int(p) for p in str(text).split(",") if p.strip()]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _f64_check(model, args, core):
    if not args.f64_check:
        return
    err = model_grad_check(model, seed=args.seed)
    core["f64_check"] = {"max_relative_error": err, "tolerance": F64_TOLERANCE}
    if not err <= F64_TOLERANCE:
        raise NumericError(f"64-bit gradient check failed: max relative error {err:.3e} > {F64_TOLERANCE}")


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(args, core):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed_given:
        cfg.seed = args.seed
    out = Path(args.out)
    ckpt_dir = out.parent / (out.name + "-checkpoints") if cfg.checkpoint_every else None
    log = (lambda s: print(s, file=sys.stderr, flush=True)) if not args.quiet else None
    result = pretrain(cfg, out_dir=ckpt_dir, log=log)
    core["train_config"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items() if k != "model"}
    _f64_check(result.model, args, core)
    manifest = save_weights(result.model, out, extra={"train_config": core["train_config"], "step": cfg.steps})
    trace = out.parent / (out.name + ".loss.csv")
    write_loss_trace(result.losses, trace)
    core["fingerprint"] = result.model.fingerprint()
    return [manifest, trace] + list(result.checkpoints)


def _base(args, params, model):
    name = params.pop("base", "icl")
    return ICLPredictor(model) if name == "icl" else baseline(name)


def cmd_predict(args, core):
    model = load_weights(args.model)
    _f64_check(model, args, core)
    params = json.loads(args.params) if args.params else {}
    if not isinstance(params, dict):
        raise ContractError("--params must be a JSON object")
    train, h1 = _load(args.train)
    test, h2 = _load(args.test, target_optional=True)
    if train.task != test.task:
        raise ContractError("train and test files disagree on the task kind")
    if train.task == "classification":
        test = align_labels(test, train.class_names)
    core["dataset_hashes"] = {"train": h1[0], "test": h2[0]}
    train, test = prepare_split(train, test)
    base = _base(args, params, model)
    task, C, seed = train.task, train.n_classes, args.seed
    s = args.strategy
    if s is None:
        out = base(train.X, train.y, test.X, task, C, seed)
    elif s == "subspace":
        out = subspace_ensemble_predict(train.X, train.y, test.X, params.pop("budget", 16), seed, base, task, C)
    elif s == "pca-bag":
        out = pca_bagging_predict(train.X, train.y, test.X, params.pop("target_dim", min(16, train.d)),
                                  params.pop("bags", 8), seed, base, task, C)
    elif s in ("dpt", "star", "ecoc"):
        if task != "classification":
            raise ContractError(f"--strategy {s} applies to classification")
        out = many_class_predict(train.X, train.y, test.X, C, s, seed, base, **params)
        params = {}
    else:
        plan = LargeScalePlan(variant=s, **{k: params.pop(k) for k in list(params)
                                            if k in ("cap", "repetitions", "forest_size", "forest_fraction", "kmeans_iters")})
        embedder = None
        if s == "sq":
            layer = params.pop("layer", model.cfg.depth)
            embedder = lambda Sx, Sy, Q, sd: vanilla_embeddings(Sx, Sy, Q, model, layer, sd, task).part("test")
        out = large_scale_predict(train.X, train.y, test.X, plan, seed, base, task, C, embedder)
    if params:
        raise ContractError(f"unused --params keys: {sorted(params)}")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if task == "classification":
            names = train.class_names
            probs = out.probs
            header = ["id", "prediction"] + ([f"p_{n}" for n in names] if probs is not None else [])
            w.writerow(header)
            for i, lab in enumerate(out.labels):
                row = [i, names[int(lab)]]
                if probs is not None:
                    row += [repr(float(v)) for v in probs[i, : len(names)]]
                w.writerow(row)
        else:
            w.writerow(["id", "prediction"])
            for i, v in enumerate(out.values):
                w.writerow([i, repr(float(v))])
    core["strategy"] = s or "none"
    core["members"] = out.n_members
    if test.labelled:
        if task == "classification":
            core["test_accuracy"] = float(np.mean(out.labels == test.y))
        else:
            core["test_rmse"] = float(np.sqrt(np.mean((out.values - test.y) ** 2)))
    return [Path(args.out)]


def cmd_embed(args, core):
    model = load_weights(args.model)
    _f64_check(model, args, core)
    ds, hashes = _load(args.data)
    core["dataset_hashes"] = {"data": hashes[0]}
    layer = _layers(args.layer)
    if args.mode in ("dummy", "permute"):
        (prepared,) = prepare_split(ds)
        emb = unsupervised_embeddings(prepared.X, model, args.mode, args.seed, layer, prepared.categorical)
    else:
        tr, va, te = split_64_16_20(ds, args.seed)
        train, test = prepare_split(ds.subset(np.concatenate([tr, va])), ds.subset(te))
        if args.mode == "vanilla":
            emb = vanilla_embeddings(train.X, train.y, test.X, model, model.cfg.depth if layer is None else layer,
                                     args.seed, ds.task)
        else:
            emb = lofo_embeddings(train.X, train.y, test.X, model, args.folds, layer, args.seed, ds.task)
    write_embeddings_csv(emb, args.out)
    core["mode"] = args.mode
    core["layers"] = list(emb.layers)
    core["width"] = emb.width
    return [Path(args.out)]


def cmd_inspect(args, core):
    model = load_weights(args.model)
    _f64_check(model, args, core)
    ds, hashes = _load(args.data)
    core["dataset_hashes"] = {"data": hashes[0]}
    (data,) = prepare_split(ds)
    y = data.y
    layer = _layers(args.layer)
    outputs = [Path(args.out)]
    if args.what == "attention":
        summary = attention_summary(data.X, y, model, layer, args.seed, ds.task)
        write_attention_csv(summary, args.out, data.columns)
        if args.runs > 1:
            ell = layer if isinstance(layer, int) else model.cfg.depth
            rep = attention_stability(data.X, y, model, ell, args.runs, args.seed, task=ds.task)
            stab = Path(str(args.out) + ".stability.json")
            stab.write_text(json.dumps({"layer": ell, "runs": args.runs, "mean_cosine": rep.mean,
                                        "variance": rep.variance, "cosines": rep.cosines}, indent=2))
            outputs.append(stab)
    else:
        ell = layer if isinstance(layer, int) else model.cfg.depth
        coords, attrs = token_pca_projection(data.X, y, model, ell, args.seed, ds.task)
        write_projection_csv(coords, attrs, args.out, data.columns)
    return outputs


def cmd_bench(args, core):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    model = load_weights(args.model) if args.model else None
    if model is not None:
        _f64_check(model, args, core)
    datasets = bench.load_suite(args.suite)
    suite = Path(args.suite)
    hashes = {d.name: bench.file_hash(suite / d.name / "data.csv", suite / d.name / "meta.json") for d in datasets}
    seeds = [args.seed + s for s in range(args.seeds)]
    table = bench.run_benchmark(datasets, methods, seeds, model, threads=args.threads)
    config = {"methods": methods, "seeds": args.seeds, "seed": args.seed,
              "model": model.fingerprint() if model is not None else None}
    man = bench.manifest(config, hashes, seeds)
    Path(args.out).write_text(table.to_json(man))
    core.update(man)
    core["failed_cells"] = len(table.errors)
    return [Path(args.out)]


def cmd_stats(args, core):
    text = Path(args.table).read_text()
    table = bench.BenchmarkTable.from_json(text)
    datasets = table.slice_by_metric(args.metric) if args.metric else list(table.datasets)
    scores = table.seed_means(datasets=datasets)
    hib = table.higher_is_better[[table.datasets.index(d) for d in datasets]]
    result = {"statistic": args.what, "methods": table.methods, "datasets": datasets}
    if args.what == "rank":
        result["average_rank"] = stats.average_rank(scores, hib).tolist()
    elif args.what == "pama":
        result["pama"] = stats.pama(scores, hib).tolist()
    else:
        report = stats.wilcoxon_holm(scores, table.methods, hib, args.alpha)
        result.update(report.to_dict())
        result["pama"] = stats.pama(scores, hib).tolist()
        result["alpha"] = args.alpha
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True))
    core["table_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    return [Path(args.out)]


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualtab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dualtab {__version__}")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="torch / worker threads; 1 is bit-reproducible")
    p.add_argument("--f64-check", action="store_true", help="64-bit gradient check of the model before use")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="train on the synthetic prior")
    s.add_argument("--config", help="TrainConfig JSON (defaults when omitted)")
    s.add_argument("--out", required=True, help="weights stem; writes <out>.json and <out>.bin")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("predict", help="in-context prediction, optionally through a strategy")
    s.add_argument("--model", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--strategy", choices=STRATEGIES)
    s.add_argument("--params", help="JSON object of strategy parameters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("embed", help="extract label-slot embeddings")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=EMBED_MODES, default="lofo")
    s.add_argument("--layer", help="layer index or comma list (default: last)")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("inspect", help="attention maps or token projections")
    s.add_argument("what", choices=("attention", "tokens"))
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--layer")
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("bench", help="run the split/seed protocol over a suite")
    s.add_argument("--suite", required=True)
    s.add_argument("--methods", required=True, help="comma list of icl, knn, linear, cart, dummy")
    s.add_argument("--seeds", type=int, default=15)
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("stats", help="rank statistics over a results JSON")
    s.add_argument("what", choices=("rank", "pama", "wilcoxon"))
    s.add_argument("--table", required=True)
    s.add_argument("--metric", choices=("accuracy", "rmse"))
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    args.seed = args.seed if args.seed is not None else 0
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    set_threads(args.threads)
    started = time.time()
    core = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
            "seed": args.seed, "threads": args.threads, "version": __version__}
    try:
        artifacts = args.func(args, core)
    except (DualtabError, OSError, json.JSONDecodeError) as exc:
        print(f"dualtab: error: {exc}", file=sys.stderr)
        return 1
    bench.write_run_manifest(_manifest_path(args.out), core, started, artifacts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
