"""Pure-Python/numpy backend.

Mirrors ``_ckernels.pyx`` node for node: same stack discipline, same RNG
draws, same gain arithmetic.  Used when the compiled extension is missing
or ``CANOPY_PURE_PYTHON=1`` is set.
"""

import numpy as np

from ._rng import SplitMix64
from .splits import _search

NAME = "python"


def build(X, y, w, n_classes, criterion, max_features, min_split, min_leaf, max_depth,
          lam, purity_stop, right_first, seed):
    n, d = X.shape
    regression = criterion == 2
    k = 2 if regression else n_classes
    yi = y if regression else y.astype(np.intp)
    samples = np.flatnonzero(w > 0)
    cap = max(1, 2 * samples.size - 1)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float32)
    left = np.zeros(cap, dtype=np.int32)
    right = np.zeros(cap, dtype=np.int32)
    value = np.zeros((cap, k), dtype=np.float64)
    bucket = np.full(cap, -1, dtype=np.int64)
    row_leaf = np.full(n, -1, dtype=np.int64)
    rng = SplitMix64(seed)

    node_count = 0
    leaf_count = 0
    max_seen_depth = 0
    stack = [(samples, 0, -1, False, np.zeros(d, dtype=bool))]
    while stack:
        s, depth, parent, is_left, known = stack.pop()
        node = node_count
        node_count += 1
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        max_seen_depth = max(max_seen_depth, depth)

        ws = w[s]
        if regression:
            wy = ws * y[s]
            stats = np.array([ws.sum(), wy.sum(), (wy * y[s]).sum()])
            W = stats[0]
            value[node, 0] = stats[1] / W
            value[node, 1] = W
            pure = y[s].min() == y[s].max()
        else:
            stats = np.bincount(yi[s], weights=ws, minlength=k).astype(np.float64)
            W = stats.sum()
            value[node] = stats
            pure = np.count_nonzero(stats) <= 1

        split = None
        if not (W < min_split or (0 <= max_depth <= depth) or (purity_stop and pure)):
            split = _search(X, yi, w, s, stats, criterion, lam, max_features, min_leaf,
                            rng, known)
        if split is None:
            bucket[node] = leaf_count
            row_leaf[s] = leaf_count
            leaf_count += 1
            continue
        f, thr = split[0], split[1]
        feature[node] = f
        threshold[node] = thr
        go_left = X[s, f] <= thr
        ls, rs = s[go_left], s[~go_left]
        child = (depth + 1, node)
        if right_first:
            stack.append((ls, *child, True, known.copy()))
            stack.append((rs, *child, False, known))
        else:
            stack.append((rs, *child, False, known.copy()))
            stack.append((ls, *child, True, known))

    m = node_count
    return {
        "feature": feature[:m].copy(),
        "threshold": threshold[:m].copy(),
        "left": left[:m].copy(),
        "right": right[:m].copy(),
        "value": value[:m].copy(),
        "bucket": bucket[:m].copy(),
        "row_leaf": row_leaf,
        "n_leaves": leaf_count,
        "depth": max_seen_depth,
    }


def apply(feature, threshold, left, right, X):
    """Node index of the leaf reached by every row of X."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        cur = node[active]
        f = feature[cur]
        go_left = X[active, f] <= threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
        active = active[feature[node[active]] >= 0]
    return node
