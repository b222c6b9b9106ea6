"""Decision trees: standard CART growth, balanced top trees, routing, I/O.

A tree is a set of parallel node arrays with node 0 as the root.  Internal
nodes send ``x[feature] <= threshold`` left.  Leaves are numbered
0..N-1 in the order the construction stack emits them; for top trees that
number is the bucket index.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._backend import kernels
from ._rng import SplitMix64
from .errors import ConfigError, DomainError, FormatError
from .splits import CRITERION_CODES, GainConfig

MODES = ("classification", "regression", "top")
TREE_MAGIC = b"CTRE"
TREE_VERSION = 1
_TREE_HEADER = struct.Struct("<4sHBIIQ")
_NO_BUCKET = np.iinfo(np.uint64).max


@dataclass
class TreeModel:
    feature: np.ndarray     # int32, -1 at leaves
    threshold: np.ndarray   # float32
    left: np.ndarray        # int32
    right: np.ndarray       # int32
    value: np.ndarray       # class histogram (m, k) or (mean, weight) (m, 2)
    bucket: np.ndarray      # int64 leaf number, -1 at internal nodes
    n_features: int
    n_classes: int
    mode: str = "classification"
    depth: int = 0
    train_leaves: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DomainError(f"patterns must have {self.n_features} features, "
                              f"got shape {X.shape}")
        return np.ascontiguousarray(X)

    def apply(self, X) -> np.ndarray:
        """Node index of the leaf each pattern reaches."""
        return kernels.apply(self.feature, self.threshold, self.left, self.right, self._check(X))

    def predict_leaf_index(self, X) -> np.ndarray:
        return self.bucket[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        """Majority class (lowest index on ties) or mean label at the leaf."""
        if self.value.size == 0:
            raise DomainError("tree carries no leaf labels (deserialized top tree)")
        leaf = self.apply(X)
        if self.mode == "regression" or (self.mode == "top" and self.n_classes == 0):
            return self.value[leaf, 0].copy()
        return np.argmax(self.value[leaf], axis=1).astype(np.int64)

    def leaf_labels(self) -> np.ndarray:
        """Prediction stored at every node (meaningful at leaves)."""
        if self.mode == "regression":
            return self.value[:, 0]
        return np.argmax(self.value, axis=1)


@dataclass(frozen=True)
class BuildParams:
    gain: GainConfig = GainConfig()
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_depth: Optional[int] = None
    mode: str = "standard"
    leaf_threshold: Optional[float] = None

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.mode not in ("standard", "top_tree"):
            raise ConfigError(f"unknown build mode {self.mode!r}")
        if self.mode == "top_tree" and (self.leaf_threshold is None or self.leaf_threshold < 2):
            raise ConfigError("top_tree mode needs leaf_threshold >= 2")


def _seed_from(rng) -> int:
    if rng is None:
        return 0
    if isinstance(rng, SplitMix64):
        return rng.next()
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng) & 0xFFFFFFFFFFFFFFFF


def _prepare(X, y, weights, classification, n_classes):
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DomainError("X must be a non-empty 2-d array")
    n = X.shape[0]
    y = np.asarray(y)
    if y.shape != (n,):
        raise DomainError("y must hold one label per row")
    if weights is None:
        w = np.ones(n, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or np.any(w != np.floor(w)):
            raise DomainError("weights must be non-negative integer multiplicities")
    if not w.sum() >= 1:
        raise DomainError("total weight is zero")
    if classification:
        k = int(y.max()) + 1 if n_classes is None else int(n_classes)
        if y.min() < 0 or y.max() >= k:
            raise DomainError(f"class labels must lie in [0, {k})")
    else:
        k = 0
    return X, np.ascontiguousarray(y, dtype=np.float64), w, k


def _assemble(out, d, k, mode) -> TreeModel:
    return TreeModel(out["feature"], out["threshold"], out["left"], out["right"],
                     out["value"], out["bucket"], d, k, mode, int(out["depth"]),
                     train_leaves=out["row_leaf"])


def build_tree(X, y, weights=None, params: BuildParams = BuildParams(), rng=None,
               n_classes: Optional[int] = None) -> TreeModel:
    """Grow a CART tree depth-first on weighted rows.

    A node becomes a leaf when it is pure, weighs less than
    ``min_samples_split``, sits at ``max_depth``, or no sampled feature
    admits a split.  Leaves keep the weighted class histogram (or weighted
    mean label and weight for the variance criterion).
    """
    if params.mode != "standard":
        raise ConfigError("build_tree grows standard trees; use build_top_tree")
    cfg = params.gain
    crit = CRITERION_CODES[cfg.measure]
    classification = crit != 2
    X, yv, w, k = _prepare(X, y, weights, classification, n_classes)
    F = cfg.resolve_features(X.shape[1])
    out = kernels.build(X, yv, w, k, crit, F, float(params.min_samples_split),
                        float(params.min_samples_leaf),
                        -1 if params.max_depth is None else int(params.max_depth),
                        float(cfg.lam), True, False, _seed_from(rng))
    return _assemble(out, X.shape[1], k, "classification" if classification else "regression")


def build_top_tree(X, y, leaf_threshold: float, lam: float = 1.0, measure: str = "gini",
                   n_classes: Optional[int] = None, purity_stop: bool = False) -> TreeModel:
    """Grow a top tree on an unweighted subset with an explicit stack.

    A node becomes a leaf iff it holds fewer than ``leaf_threshold`` rows or
    all its rows coincide; purity does not stop splitting unless
    ``purity_stop`` is set.  Every split maximises the balance-blended gain
    over all features.  Leaves are numbered in pop order (right subtrees
    first), giving bucket indices 0..N-1.
    """
    if leaf_threshold < 2:
        raise ConfigError("leaf_threshold must be >= 2")
    cfg = GainConfig(lam=lam, measure=measure, features_per_node="all")
    crit = CRITERION_CODES[measure]
    X, yv, w, k = _prepare(X, y, None, crit != 2, n_classes)
    out = kernels.build(X, yv, w, k, crit, X.shape[1], float(leaf_threshold), 1.0, -1,
                        float(cfg.lam), bool(purity_stop), True, 0)
    return _assemble(out, X.shape[1], k, "top")


def estimate_leaf_threshold(M: float, R: int, n: int) -> float:
    """Subset-scale stopping size ``max(2, M * R / n)``."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    if not (1 <= R <= n):
        raise ConfigError(f"need 1 <= R <= n, got R={R}, n={n}")
    return max(2.0, M * R / n)


def leaf_tree(histogram_or_mean, n_features: int, n_classes: int, weight: float = 1.0
              ) -> TreeModel:
    """Single-leaf tree predicting a fixed histogram (or mean)."""
    if n_classes:
        value = np.asarray(histogram_or_mean, dtype=np.float64).reshape(1, n_classes)
        mode = "classification"
    else:
        value = np.array([[float(histogram_or_mean), float(weight)]])
        mode = "regression"
    return TreeModel(np.array([-1], np.int32), np.zeros(1, np.float32), np.zeros(1, np.int32),
                     np.zeros(1, np.int32), value, np.zeros(1, np.int64), n_features,
                     n_classes, mode, 0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _record_dtype(mode: str, k: int) -> np.dtype:
    base = [("kind", "u1"), ("feature", "<i4"), ("threshold", "<f4"), ("left", "<u4"),
            ("right", "<u4")]
    if mode == "classification":
        return np.dtype(base + [("hist", "<u8", (k,))])
    if mode == "regression":
        return np.dtype(base + [("mean", "<f8"), ("count", "<u8")])
    return np.dtype(base + [("bucket", "<u8")])


def serialize(tree: TreeModel) -> bytes:
    m = tree.n_nodes
    rec = np.zeros(m, dtype=_record_dtype(tree.mode, tree.n_classes))
    leaf = tree.feature < 0
    rec["kind"] = leaf
    rec["feature"] = tree.feature
    rec["threshold"] = tree.threshold
    rec["left"] = np.where(leaf, 0, tree.left)
    rec["right"] = np.where(leaf, 0, tree.right)
    if tree.mode == "classification":
        rec["hist"] = np.rint(tree.value).astype(np.uint64)
    elif tree.mode == "regression":
        rec["mean"] = tree.value[:, 0]
        rec["count"] = np.rint(tree.value[:, 1]).astype(np.uint64)
    else:
        rec["bucket"] = np.where(leaf, tree.bucket, 0).astype(np.uint64)
        rec["bucket"][~leaf] = _NO_BUCKET
    head = _TREE_HEADER.pack(TREE_MAGIC, TREE_VERSION, MODES.index(tree.mode), tree.n_features,
                             tree.n_classes, m)
    return head + rec.tobytes()


def deserialize(blob: bytes) -> TreeModel:
    if len(blob) < _TREE_HEADER.size:
        raise FormatError("truncated tree header")
    magic, version, mode_code, d, k, m = _TREE_HEADER.unpack_from(blob)
    if magic != TREE_MAGIC:
        raise FormatError(f"bad tree magic {magic!r}")
    if version != TREE_VERSION:
        raise FormatError(f"unsupported tree format version {version}")
    if mode_code >= len(MODES):
        raise FormatError(f"unknown tree mode {mode_code}")
    mode = MODES[mode_code]
    if mode == "classification" and k < 1:
        raise FormatError("classification tree with zero classes")
    dt = _record_dtype(mode, k)
    if m < 1 or len(blob) != _TREE_HEADER.size + m * dt.itemsize:
        raise FormatError(f"tree payload size mismatch for {m} nodes")
    rec = np.frombuffer(blob, dtype=dt, offset=_TREE_HEADER.size, count=m)
    feature = rec["feature"].astype(np.int32)
    leaf = rec["kind"] == 1
    if np.any(rec["kind"] > 1) or np.any(leaf != (feature < 0)) or np.any(feature[leaf] != -1):
        raise FormatError("inconsistent node kinds")
    internal = ~leaf
    if np.any(feature[internal] >= d) or not np.all(np.isfinite(rec["threshold"][internal])):
        raise FormatError("internal node with invalid feature or threshold")
    left = rec["left"].astype(np.int64)
    right = rec["right"].astype(np.int64)
    children = np.concatenate([left[internal], right[internal]])
    if children.size and (children.min() < 1 or children.max() >= m):
        raise FormatError("child index out of range")
    if np.any(np.bincount(children, minlength=m)[1:] != 1) or children.size != m - 1:
        raise FormatError("node array is not a single binary tree")
    seen = np.zeros(m, dtype=bool)
    stack = [0]
    while stack:
        v = stack.pop()
        if seen[v]:
            raise FormatError("cycle in node array")
        seen[v] = True
        if internal[v]:
            stack.extend((int(left[v]), int(right[v])))
    if not seen.all():
        raise FormatError("unreachable nodes in node array")
    bucket = np.full(m, -1, dtype=np.int64)
    if mode == "classification":
        value = rec["hist"].astype(np.float64)
        bucket[leaf] = np.arange(np.count_nonzero(leaf))
    elif mode == "regression":
        value = np.stack([rec["mean"], rec["count"].astype(np.float64)], axis=1)
        bucket[leaf] = np.arange(np.count_nonzero(leaf))
    else:
        value = np.zeros((0, max(k, 1)))
        b = rec["bucket"]
        lb = b[leaf]
        if np.any(b[internal] != _NO_BUCKET) or not np.array_equal(
                np.sort(lb), np.arange(lb.size, dtype=np.uint64)):
            raise FormatError("top-tree leaf bucket indices are not 0..N-1")
        bucket[leaf] = lb.astype(np.int64)
    left32 = np.where(leaf, 0, left).astype(np.int32)
    right32 = np.where(leaf, 0, right).astype(np.int32)
    return TreeModel(feature, rec["threshold"].astype(np.float32), left32, right32, value,
                     bucket, int(d), int(k), mode, _depth(left32, right32, leaf))


def _depth(left, right, leaf) -> int:
    depth = np.zeros(left.shape[0], dtype=np.int64)
    best = 0
    stack = [0]
    while stack:
        v = stack.pop()
        best = max(best, int(depth[v]))
        if not leaf[v]:
            for c in (left[v], right[v]):
                depth[c] = depth[v] + 1
                stack.append(int(c))
    return best
