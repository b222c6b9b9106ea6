"""Time tree construction and traversal with the compiled and numpy kernels.

    python3 benchmarks/bench_kernels.py [--rows 100000] [--features 10] [--repeat 3]

Both backends are fed the same arrays; the script also checks that they
grow identical classification trees before reporting timings.
"""

import argparse
import time

import numpy as np

from canopy import _pykernels

try:
    from canopy import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=100_000)
    p.add_argument("--features", type=int, default=10)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--max-features", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.rows, args.features)).astype(np.float32)
    y = ((X[:, 0] + X[:, 1] > 0).astype(int) + (X[:, 2] > 1)).astype(np.float64)
    w = rng.poisson(1.0, args.rows).astype(np.float64)
    build_args = (X, y, w, args.classes, 0, args.max_features, 2.0, 1.0, -1, 0.0, True, False,
                  args.seed)
    probe = rng.normal(size=(args.rows, args.features)).astype(np.float32)

    backends = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
    results = {}
    print(f"rows={args.rows} features={args.features} max_features={args.max_features}")
    print(f"{'backend':<8} {'build_s':>9} {'apply_s':>9} {'nodes':>8}")
    for mod in backends:
        t_build, tree = best_of(lambda: mod.build(*build_args), args.repeat)
        tree_args = (tree["feature"], tree["threshold"], tree["left"], tree["right"], probe)
        t_apply, leaves = best_of(lambda: mod.apply(*tree_args), args.repeat)
        results[mod.NAME] = (tree, leaves, t_build, t_apply)
        print(f"{mod.NAME:<8} {t_build:9.3f} {t_apply:9.3f} {len(tree['feature']):8d}")

    if len(results) == 2:
        (a, la, ba, aa), (b, lb, bb, ab) = results["python"], results["cython"]
        same = all(np.array_equal(a[k], b[k]) for k in ("feature", "threshold", "left", "right",
                                                         "value")) and np.array_equal(la, lb)
        print(f"identical trees: {same}")
        print(f"speedup build x{ba / bb:.1f}, apply x{aa / ab:.1f}")
        return 0 if same else 1
    print("compiled kernels unavailable; only the numpy backend was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
