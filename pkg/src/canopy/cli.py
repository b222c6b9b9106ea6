"""``canopy`` command line: ingest, generate, train, predict, evaluate, benchmark.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 storage or
runtime error.  Training reports are JSON lines; benchmark grids are CSV
with the fixed column set ``BENCH_COLUMNS``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import synthetic
from .data import DatasetHandle, ResidentCounter, ingest_csv, open_dataset
from .errors import CanopyError, ConfigError, DomainError
from .forest import SCHEMES, ForestConfig, load_forest, save_forest, train
from .splits import MEASURES, GainConfig
from .tree import BuildParams

BENCH_COLUMNS = [
    "scheme", "n_train", "seed", "total_trees", "n_top", "n_b",
    "t_sample_top", "t_distribute", "t_bottom", "t_total", "peak_resident_rows",
    "metric", "metric_value", "status", "error",
]
TEST_SEED_OFFSET = 1_000_003


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _max_features(text):
    if text in ("sqrt", "all"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("max-features must be 'sqrt', 'all' or an integer")


def _guess_format(path, fmt):
    if fmt:
        return fmt
    return "csv" if str(path).lower().endswith((".csv", ".txt")) else "binary"


def _open(path, fmt, task=None, chunk_size=100_000):
    fmt = _guess_format(path, fmt)
    if fmt == "csv":
        out = Path(tempfile.mkdtemp(prefix="canopy-")) / "data.cnpy"
        ingest_csv(path, out, task or "classification")
        return open_dataset(out, "binary", task, chunk_size)
    return open_dataset(path, fmt, task, chunk_size)


def resolve_tree_counts(trees, top_trees, bottom_per_top, scheme="woody"):
    """Return ``(n_top, n_b)`` from any consistent subset of the three flags.

    With neither split given, woody uses ``gcd(trees, 6)`` top trees; the
    reference schemes always use one tree per unit.
    """
    if scheme != "woody":
        if trees is not None:
            total = trees
        elif top_trees is None and bottom_per_top is None:
            total = 24
        else:
            total = (top_trees or 1) * (bottom_per_top or 1)
        if total < 1:
            raise ConfigError("--trees must be >= 1")
        return total, 1
    for name, v in (("--trees", trees), ("--top-trees", top_trees),
                    ("--bottom-per-top", bottom_per_top)):
        if v is not None and v < 1:
            raise ConfigError(f"{name} must be >= 1")
    if top_trees is not None and bottom_per_top is not None:
        if trees is not None and trees != top_trees * bottom_per_top:
            raise ConfigError(f"--trees {trees} != --top-trees {top_trees} x "
                              f"--bottom-per-top {bottom_per_top}")
        return top_trees, bottom_per_top
    total = 24 if trees is None else trees
    if bottom_per_top is not None:
        top_trees = total // bottom_per_top
        divisor = bottom_per_top
    else:
        if top_trees is None:
            top_trees = math.gcd(total, 6)
        divisor = top_trees
    if top_trees < 1 or total % divisor:
        raise ConfigError(f"--trees {total} is not divisible by {divisor}")
    return top_trees, total // top_trees


def forest_config_from_args(args, run_id="run") -> ForestConfig:
    n_top, n_b = resolve_tree_counts(args.trees, args.top_trees, args.bottom_per_top,
                                     args.scheme)
    if args.store == "disk" and args.scheme == "standard":
        raise ConfigError("the standard scheme keeps the whole dataset in memory; "
                          "use --store memory")
    if args.chunk_size < 1:
        raise ConfigError("--chunk-size must be >= 1")
    if args.leaf_bucket_size is not None and args.leaf_bucket_size < 2:
        raise ConfigError("--leaf-bucket-size must be >= 2")
    if args.subset_size is not None and args.subset_size < 1:
        raise ConfigError("--subset-size must be >= 1")
    scratch = args.scratch_dir or os.environ.get("CANOPY_SCRATCH")
    if args.store == "disk" and not scratch:
        raise ConfigError("--store disk needs --scratch-dir or CANOPY_SCRATCH")
    bottom = BuildParams(gain=GainConfig(measure=args.criterion,
                                         features_per_node=args.max_features))
    cfg = ForestConfig(
        n_top=n_top, n_b=n_b,
        R=args.subset_size if args.scheme == "woody" else None,
        M=args.leaf_bucket_size, lam=args.lam, chunk_size=args.chunk_size,
        store=args.store, scratch_dir=scratch, seed=args.seed, bottom_params=bottom,
        bootstrap=not args.no_bootstrap, jobs=args.jobs,
        hard_cap_multiplier=args.hard_cap_multiplier,
        subset_size=args.subset_size if args.scheme == "subsets" else None,
        run_id=run_id)
    cfg.validate()
    return cfg


def score(model, X, y):
    """``('accuracy', value)`` or ``('mse', value)``."""
    pred = model.predict(X)
    if model.task == "classification":
        return "accuracy", float(np.mean(pred == y)), pred
    return "mse", float(np.mean((pred - y) ** 2)), pred


def _check_compatible(model, handle):
    if handle.n_features != model.n_features:
        raise DomainError(f"model expects {model.n_features} features, "
                          f"dataset has {handle.n_features}")
    if handle.task != model.task:
        raise DomainError(f"model is {model.task}, dataset is {handle.task}")


def metrics_report(model, seed, total_seconds, metric=None, value=None, model_path=None):
    rep = model.report
    units = model.units
    return {
        "scheme": model.scheme,
        "n_train": rep.n_train,
        "total_trees": model.n_trees,
        "n_top": len(units) if model.scheme == "woody" else model.n_trees,
        "n_b": len(units[0].bottoms[0]) if model.scheme == "woody" else 1,
        "phase_seconds": {k: max(0.0, float(v)) for k, v in rep.phase_seconds.items()},
        "total_seconds": total_seconds,
        "peak_resident_rows": int(max(rep.phase_peaks.values(), default=0)),
        "phase_peak_rows": {k: int(v) for k, v in rep.phase_peaks.items()},
        "max_bucket_rows": rep.manifest.max_rows if rep.manifest else None,
        "metric": metric,
        "value": value,
        "seed": seed,
        "model": model_path,
    }


def _emit(record, path=None):
    line = json.dumps(record, sort_keys=True)
    if path:
        with open(path, "a") as fh:
            fh.write(line + "\n")
    else:
        print(line)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    h = ingest_csv(args.csv, args.output, args.task,
                   has_header={"auto": None, "yes": True, "no": False}[args.header])
    print(f"n_rows={h.n_rows} d={h.n_features} k={h.n_classes}")
    return 0


def cmd_generate(args):
    kw = {}
    if args.features is not None:
        kw["d"] = args.features
    if args.classes is not None:
        kw["k"] = args.classes
    h = synthetic.write_generated(args.output, args.generate, args.rows, args.seed, **kw)
    print(f"n_rows={h.n_rows} d={h.n_features} k={h.n_classes}")
    return 0


def cmd_train(args):
    cfg = forest_config_from_args(args, run_id=f"run-{os.getpid()}")
    handle = _open(args.data, args.format, args.task, cfg.chunk_size)
    test = _open(args.test, args.format, args.task) if args.test else None
    cfg.validate(handle.n_rows if args.scheme == "woody" else None)
    if test is not None and (test.n_features != handle.n_features or test.task != handle.task):
        raise DomainError(f"test set ({test.n_features} features, {test.task}) does not "
                          f"match training data ({handle.n_features}, {handle.task})")
    t0 = time.perf_counter()
    model = train(handle, cfg, args.scheme, ResidentCounter())
    total = time.perf_counter() - t0
    save_forest(model, args.output)
    metric = value = None
    if test is not None:
        X, y = test.read_all()
        metric, value, _ = score(model, X, y)
    _emit(metrics_report(model, args.seed, total, metric, value, str(args.output)), args.report)
    return 0


def _write_predictions(path, pred, task):
    with open(path, "w") as fh:
        if task == "classification":
            fh.writelines(f"{int(p)}\n" for p in pred)
        else:
            fh.writelines(f"{float(p)!r}\n" for p in pred)


def cmd_predict(args):
    model = load_forest(args.model)
    handle = _open(args.data, args.format, None, args.chunk_size)
    _check_compatible(model, handle)
    parts = [model.predict(c.X, args.chunk_size) for c in handle.iter_chunks()]
    _write_predictions(args.output, np.concatenate(parts), model.task)
    return 0


def cmd_evaluate(args):
    model = load_forest(args.model)
    handle = _open(args.data, args.format, None, args.chunk_size)
    _check_compatible(model, handle)
    X, y = handle.read_all()
    metric, value, pred = score(model, X, y)
    if args.output:
        _write_predictions(args.output, pred, model.task)
    print(f"{metric}: {value:.6f}")
    return 0


def _bench_data(args, n, seed):
    """Training handle of ``n`` rows and the test arrays for one grid cell."""
    if args.generate:
        X, y = synthetic.generate(args.generate, n, seed)
        k = synthetic.n_classes_of(args.generate)
        Xt, yt = synthetic.generate(args.generate, args.test_rows, seed + TEST_SEED_OFFSET)
        return DatasetHandle.from_arrays(X, y, n_classes=k, chunk_size=args.chunk_size), Xt, yt
    full = _open(args.data, args.format, None, args.chunk_size)
    if args.test:
        Xt, yt = _open(args.test, args.format).read_all()
        pool = full.n_rows
    else:
        # hold out the last 20% of the file
        pool = full.n_rows - max(1, full.n_rows // 5)
        X, y = full.read_all()
        Xt, yt = X[pool:], y[pool:]
    if n > pool:
        raise ConfigError(f"requested n_train={n} exceeds the {pool} available training rows")
    return full.head(n), Xt, yt


def cmd_benchmark(args):
    if not args.generate and not args.data:
        raise ConfigError("benchmark needs a dataset path or --generate")
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")
    if not args.sizes or not args.seeds:
        raise ConfigError("--sizes and --seeds must be non-empty")
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for scheme in schemes:
            for n in args.sizes:
                for seed in args.seeds:
                    row = {"scheme": scheme, "n_train": n, "seed": seed, "status": "ok",
                           "error": ""}
                    try:
                        sub = argparse.Namespace(**{**vars(args), "scheme": scheme,
                                                    "seed": seed})
                        cfg = forest_config_from_args(sub, run_id=f"bench-{os.getpid()}")
                        handle, Xt, yt = _bench_data(args, n, seed)
                        t0 = time.perf_counter()
                        model = train(handle, cfg, scheme, ResidentCounter())
                        total = time.perf_counter() - t0
                        metric, value, _ = score(model, Xt, yt)
                        rep = metrics_report(model, seed, total, metric, value)
                        ps = rep["phase_seconds"]
                        row.update(total_trees=rep["total_trees"], n_top=rep["n_top"],
                                   n_b=rep["n_b"], t_sample_top=f"{ps['sample_top']:.6f}",
                                   t_distribute=f"{ps['distribute']:.6f}",
                                   t_bottom=f"{ps['bottom']:.6f}", t_total=f"{total:.6f}",
                                   peak_resident_rows=rep["peak_resident_rows"],
                                   metric=metric, metric_value=f"{value:.6f}")
                    except Exception as exc:  # recorded per cell; the grid continues
                        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
                    writer.writerow(row)
                    out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_forest_flags(p):
    p.add_argument("--scheme", choices=SCHEMES, default="woody")
    p.add_argument("--trees", type=int, default=None,
                   help="total ensemble size (default 24)")
    p.add_argument("--top-trees", type=int, default=None,
                   help="number of top trees (woody; default gcd(trees, 6))")
    p.add_argument("--bottom-per-top", type=int, default=None,
                   help="bottom trees per top-tree bucket (woody)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="balance weight of the top-tree gain, in [0, 1]")
    p.add_argument("--subset-size", type=int, default=None,
                   help="top-tree subset size R (woody) or per-tree subset size (subsets)")
    p.add_argument("--leaf-bucket-size", type=int, default=None,
                   help="desired bucket size M after distribution")
    p.add_argument("--chunk-size", type=int, default=100_000)
    p.add_argument("--store", choices=("memory", "disk"), default="memory")
    p.add_argument("--scratch-dir", default=None,
                   help="bucket directory for --store disk (fallback: $CANOPY_SCRATCH)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--hard-cap-multiplier", type=float, default=8.0,
                   help="re-split buckets larger than this many times M")
    p.add_argument("--criterion", choices=MEASURES, default="gini")
    p.add_argument("--max-features", type=_max_features, default="sqrt")
    p.add_argument("--no-bootstrap", action="store_true",
                   help="bottom trees use every bucket row once")
    p.add_argument("--format", choices=("binary", "csv"), default=None,
                   help="dataset format (default: by file extension)")
    p.add_argument("--task", choices=("classification", "regression"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="canopy",
                                     description="Out-of-core random forest training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a numeric CSV (label last) to binary")
    p.add_argument("csv")
    p.add_argument("--output", required=True)
    p.add_argument("--task", choices=("classification", "regression"),
                   default="classification")
    p.add_argument("--header", choices=("auto", "yes", "no"), default="auto")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--generate", choices=synthetic.GENERATORS, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a forest and write the model")
    p.add_argument("data")
    p.add_argument("--output", required=True, help="model file")
    p.add_argument("--test", default=None, help="held-out dataset to score")
    p.add_argument("--report", default=None, help="append the JSON report here")
    _add_forest_flags(p)
    p.set_defaults(func=cmd_train)

    for name, fn, helptext in (("predict", cmd_predict, "write one label per line"),
                               ("evaluate", cmd_evaluate, "print accuracy or MSE")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("model")
        p.add_argument("data")
        p.add_argument("--output", required=(name == "predict"),
                       help="predictions file")
        p.add_argument("--format", choices=("binary", "csv"), default=None)
        p.add_argument("--chunk-size", type=int, default=100_000)
        p.set_defaults(func=fn)

    p = sub.add_parser("benchmark", help="run a scheme x size x seed grid into CSV")
    p.add_argument("data", nargs="?", default=None)
    p.add_argument("--generate", choices=synthetic.GENERATORS, default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--test-rows", type=int, default=20_000)
    p.add_argument("--schemes", default="woody,subsets")
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--output", default=None, help="CSV path (default stdout)")
    _add_forest_flags(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CanopyError as exc:
        print(f"canopy: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("canopy: error: out of memory", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"canopy: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
