"""Forest construction: top trees, bucket distribution, bottom trees.

``build_big_forest`` runs the three-phase scheme:

1. one streaming pass draws ``n_top`` random subsets; a balanced top tree
   is grown on each;
2. a second pass routes every row through every top tree and appends it
   (with Poisson(1) bootstrap multiplicities, one per bottom tree) to the
   bucket of the leaf it reaches;
3. each bucket is loaded on its own and ``n_b`` fully grown bottom trees
   are built from it.

``build_subsets_forest`` and ``build_standard_forest`` are the two
reference schemes: one tree per random subset, and classic bagging over
data that fits in memory.  All schemes produce a :class:`ForestModel`.
"""

from __future__ import annotations

import io
import math
import threading
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._rng import derive_seed
from .data import (Chunk, DatasetHandle, ResidentCounter, _Reservoir, make_store,
                   reservoir_sample_many)
from .errors import ConfigError, DomainError, FormatError, StorageError
from .splits import GainConfig
from .tree import (BuildParams, TreeModel, build_top_tree, build_tree, deserialize,
                   estimate_leaf_threshold, leaf_tree, serialize)

SCHEMES = ("woody", "subsets", "standard")
SUBSETS_DEFAULT_SIZE = 500_000
FOREST_FORMAT_VERSION = 1


def default_subset_and_leaf_size(n: int) -> tuple:
    """Default top-tree subset size R and bucket size M for ``n`` rows."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    v = int(min(500_000, n, max(100 * math.sqrt(n), 100_000)))
    return v, v


@dataclass
class ForestConfig:
    n_top: int = 1
    n_b: int = 1
    R: Optional[int] = None
    M: Optional[int] = None
    lam: float = 1.0
    chunk_size: int = 100_000
    store: str = "memory"
    scratch_dir: Optional[str] = None
    seed: int = 0
    bottom_params: BuildParams = field(
        default_factory=lambda: BuildParams(gain=GainConfig(features_per_node="sqrt")))
    bootstrap: bool = True
    jobs: int = 4
    hard_cap_multiplier: float = 8.0
    subset_size: Optional[int] = None
    phase3_row_budget: Optional[int] = None
    run_id: str = "run"

    @property
    def total_trees(self) -> int:
        return self.n_top * self.n_b

    def validate(self, n: Optional[int] = None) -> None:
        if self.n_top < 1 or self.n_b < 1:
            raise ConfigError("n_top and n_b must be >= 1")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.hard_cap_multiplier < 1:
            raise ConfigError("hard_cap_multiplier must be >= 1")
        if self.M is not None and self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.R is not None and self.R < 1:
            raise ConfigError("R must be >= 1")
        if n is not None and self.R is not None and self.R > n:
            raise ConfigError(f"R={self.R} exceeds the number of rows n={n}")
        if self.subset_size is not None and self.subset_size < 1:
            raise ConfigError("subset_size must be >= 1")
        if self.store not in ("memory", "disk"):
            raise ConfigError(f"unknown store {self.store!r}")

    def resolved(self, n: int) -> "ForestConfig":
        R0, M0 = default_subset_and_leaf_size(n)
        return replace(self, R=self.R if self.R is not None else R0,
                       M=self.M if self.M is not None else M0)

    def echo(self) -> dict:
        """Model-relevant settings (execution details such as store kind excluded)."""
        bp = self.bottom_params
        return {
            "n_top": self.n_top, "n_b": self.n_b, "R": self.R, "M": self.M,
            "lambda": self.lam, "seed": self.seed, "bootstrap": self.bootstrap,
            "hard_cap_multiplier": self.hard_cap_multiplier, "subset_size": self.subset_size,
            "criterion": bp.gain.measure, "max_features": bp.gain.features_per_node,
            "min_samples_leaf": bp.min_samples_leaf, "min_samples_split": bp.min_samples_split,
            "max_depth": bp.max_depth,
        }


@dataclass
class TopUnit:
    top: TreeModel
    bottoms: list  # bottoms[leaf] -> list of n_b bottom trees


@dataclass
class BucketEntry:
    bucket_id: tuple
    top: int
    leaf: int
    n_rows: int
    location: str


@dataclass
class BucketManifest:
    entries: list = field(default_factory=list)

    def for_top(self, t: int) -> list:
        return [e for e in self.entries if e.top == t]

    def rows_per_top(self) -> dict:
        out = {}
        for e in self.entries:
            out[e.top] = out.get(e.top, 0) + e.n_rows
        return out

    @property
    def max_rows(self) -> int:
        return max((e.n_rows for e in self.entries), default=0)


@dataclass
class TrainReport:
    scheme: str
    phase_seconds: dict
    phase_peaks: dict
    manifest: Optional[BucketManifest] = None
    n_train: int = 0
    write_buffer_rows: int = 0


@dataclass
class ForestModel:
    units: list
    task: str
    n_features: int
    n_classes: int
    scheme: str = "woody"
    meta: dict = field(default_factory=dict)
    report: Optional[TrainReport] = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return sum(len(u.bottoms[0]) if u.bottoms else 0 for u in self.units)

    @property
    def combiner(self) -> str:
        return "argmax-vote" if self.task == "classification" else "mean"

    def votes(self, X) -> np.ndarray:
        """Per-class vote counts (classification) or prediction sums (regression)."""
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float32))
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DomainError(f"patterns must have {self.n_features} features, got {X.shape}")
        n = X.shape[0]
        out = np.zeros((n, self.n_classes) if self.task == "classification" else n)
        for unit in self.units:
            leaves = unit.top.predict_leaf_index(X)
            order = np.argsort(leaves, kind="stable")
            bounds = np.flatnonzero(np.diff(leaves[order])) + 1
            for grp in np.split(order, bounds):
                if grp.size == 0:
                    continue
                Xg = X[grp]
                for tree in unit.bottoms[int(leaves[grp[0]])]:
                    p = tree.predict(Xg)
                    if self.task == "classification":
                        out[grp, p] += 1
                    else:
                        out[grp] += p
        return out

    def predict(self, X, chunk_size: int = 100_000) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None, :]
        parts = []
        for s in range(0, X.shape[0], chunk_size):
            v = self.votes(X[s:s + chunk_size])
            parts.append(vote_argmax(v) if self.task == "classification" else v / self.n_trees)
        if not parts:
            return np.empty(0, dtype=np.int64 if self.task == "classification" else np.float64)
        return np.concatenate(parts)


def vote_argmax(votes) -> np.ndarray:
    """Class with most votes; ties go to the lowest class index."""
    v = np.asarray(votes)
    if v.ndim == 1:
        if v.size == 0 or v.sum() < 1:
            raise DomainError("need at least one vote")
        return int(np.argmax(v))
    return np.argmax(v, axis=1).astype(np.int64)


def predict_forest(model: ForestModel, X) -> np.ndarray:
    return model.predict(X)


# ---------------------------------------------------------------------------
# bootstrap multiplicities
# ---------------------------------------------------------------------------

_POISSON1_CDF = np.cumsum([math.exp(-1) / math.factorial(j) for j in range(24)])
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix_at(key: int, idx: np.ndarray) -> np.ndarray:
    """Output ``idx`` (0-based) of the SplitMix64 stream seeded with ``key``."""
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (idx.astype(np.uint64) + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def poisson_weights(key: int, start: int, m: int, n_b: int) -> np.ndarray:
    """Poisson(1) multiplicities for rows ``start..start+m-1``, ``n_b`` per row.

    Each value depends only on (key, row index, tree index), so the result
    does not depend on how the stream is chunked.
    """
    idx = np.arange(start * n_b, (start + m) * n_b, dtype=np.uint64)
    u = (_splitmix_at(key, idx) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return np.searchsorted(_POISSON1_CDF, u, side="right").astype(np.uint32).reshape(m, n_b)


# ---------------------------------------------------------------------------
# distribution
# ---------------------------------------------------------------------------

def _route_and_write(trees_and_keys, X, y, start, writers, n_b, bootstrap, counter):
    """Route one block of rows through each top tree and append to buckets."""
    m = len(y)
    for t, (top, key) in enumerate(trees_and_keys):
        leaves = top.predict_leaf_index(X)
        W = poisson_weights(key, start, m, n_b) if bootstrap else np.ones((m, n_b), np.uint32)
        _write_groups(t, leaves, X, y, W, writers, counter)


def _write_groups(t, leaves, X, y, W, writers, counter):
    order = np.argsort(leaves, kind="stable")
    if counter is not None:
        counter.add(len(order))
    try:
        Xs, ys, Ws, ls = X[order], y[order], W[order], leaves[order]
        bounds = np.flatnonzero(np.diff(ls)) + 1
        starts = np.concatenate([[0], bounds])
        stops = np.concatenate([bounds, [len(ls)]])
        for a, b in zip(starts, stops):
            if b > a:
                writers[(t, int(ls[a]))].append(Xs[a:b], ys[a:b], Ws[a:b])
    finally:
        if counter is not None:
            counter.release(len(order))


def distribute(top_trees, dataset: DatasetHandle, store, n_b: int, seed: int = 0,
               bootstrap: bool = True) -> BucketManifest:
    """Stream all rows once, appending each to its leaf bucket per top tree."""
    if n_b < 1:
        raise ConfigError("n_b must be >= 1")
    k = dataset.n_classes
    writers = {}
    for t, top in enumerate(top_trees):
        for leaf in range(top.n_leaves):
            writers[(t, leaf)] = store.writer((t, leaf), dataset.n_features, dataset.task, k)
    keyed = [(top, derive_seed(seed, 2, t)) for t, top in enumerate(top_trees)]
    manifest = BucketManifest()
    rows = 0
    try:
        for chunk in dataset.iter_chunks():
            _route_and_write(keyed, chunk.X, chunk.y, chunk.start, writers, n_b, bootstrap,
                             dataset.counter)
            rows += len(chunk.y)
    except StorageError as exc:
        raise StorageError(f"distribution aborted after {rows} rows: {exc}") from exc
    for (t, leaf), w in writers.items():
        rec = w.close()
        manifest.entries.append(BucketEntry((t, leaf), t, leaf, rec.n_rows, store.location((t, leaf))))
    return manifest


# ---------------------------------------------------------------------------
# oversized buckets
# ---------------------------------------------------------------------------

def _graft(top: TreeModel, leaf_label: int, sub: TreeModel):
    """Replace the leaf labelled ``leaf_label`` with subtree ``sub``.

    Sub-leaf 0 inherits ``leaf_label``; sub-leaf s >= 1 becomes N + s - 1.
    Returns the new tree and the sub-leaf -> label map.
    """
    N = top.n_leaves
    m = top.n_nodes
    p = int(np.flatnonzero((top.bucket == leaf_label) & (top.feature < 0))[0])
    idx = np.concatenate([[p], m + np.arange(sub.n_nodes - 1)]).astype(np.int32)
    label = np.concatenate([[leaf_label], N + np.arange(sub.n_leaves - 1)]).astype(np.int64)

    def cat(a, b):
        return np.concatenate([a, b[1:]])

    feature = cat(top.feature, sub.feature)
    threshold = cat(top.threshold, sub.threshold)
    left = cat(top.left, idx[sub.left])
    right = cat(top.right, idx[sub.right])
    value = cat(top.value, sub.value)
    sub_bucket = np.where(sub.bucket >= 0, label[np.maximum(sub.bucket, 0)], -1)
    bucket = cat(top.bucket, sub_bucket)
    feature[p] = sub.feature[0]
    threshold[p] = sub.threshold[0]
    left[p] = idx[sub.left[0]] if sub.feature[0] >= 0 else 0
    right[p] = idx[sub.right[0]] if sub.feature[0] >= 0 else 0
    value[p] = sub.value[0]
    bucket[p] = sub_bucket[0]
    leafmask = feature < 0
    left[leafmask] = 0
    right[leafmask] = 0
    depth = top.depth + sub.depth
    return TreeModel(feature, threshold, left, right, value, bucket, top.n_features,
                     top.n_classes, "top", depth), label


def _resplit_oversized(t, top, manifest, store, cfg, dataset, counter):
    hard_cap = cfg.hard_cap_multiplier * cfg.M
    work = [e for e in manifest.for_top(t) if e.n_rows > hard_cap]
    while work:
        e = work.pop()
        R_sub = min(cfg.R, e.n_rows)
        res = _Reservoir(R_sub, dataset.n_features,
                         np.int64 if dataset.task == "classification" else np.float64,
                         derive_seed(cfg.seed, 5, t, e.leaf), counter)
        pos = 0
        for X, y, W in store.iter_bucket(e.bucket_id, cfg.chunk_size):
            if counter is not None:
                counter.add(len(y))
            res.offer(Chunk(X, y, pos))
            if counter is not None:
                counter.release(len(y))
            pos += len(y)
        sample = res.result()
        mbar = estimate_leaf_threshold(cfg.M, len(sample), e.n_rows)
        sub = build_top_tree(sample.X, sample.y, mbar, cfg.lam,
                             cfg.bottom_params.gain.measure, n_classes=dataset.n_classes or None)
        if counter is not None:
            counter.release(len(sample))
        if sub.n_leaves < 2:
            continue  # all rows coincide: nothing to split on
        new_top, label = _graft(top, e.leaf, sub)
        tmp_ids = [(t, f"split{e.leaf}-{s}") for s in range(sub.n_leaves)]
        writers = {(0, s): store.writer(tmp_ids[s], dataset.n_features, dataset.task,
                                         dataset.n_classes) for s in range(sub.n_leaves)}
        for X, y, W in store.iter_bucket(e.bucket_id, cfg.chunk_size):
            if counter is not None:
                counter.add(len(y))
            _write_groups(0, sub.predict_leaf_index(X), X, y, W, writers, counter)
            if counter is not None:
                counter.release(len(y))
        counts = [writers[(0, s)].close().n_rows for s in range(sub.n_leaves)]
        store.delete(e.bucket_id)
        manifest.entries.remove(e)
        for s in range(sub.n_leaves):
            final = (t, int(label[s]))
            store.rename(tmp_ids[s], final)
            ne = BucketEntry(final, t, int(label[s]), counts[s], store.location(final))
            manifest.entries.append(ne)
            if counts[s] > hard_cap and counts[s] < e.n_rows:
                work.append(ne)
        top = new_top
    return top


# ---------------------------------------------------------------------------
# bottom trees
# ---------------------------------------------------------------------------

def _fallback_tree(y, d, k, task, hint=None):
    if task == "classification":
        if len(y):
            hist = np.bincount(y.astype(np.int64), minlength=k)[:k].astype(np.float64)
        else:
            hist = np.asarray(hint, dtype=np.float64)
        return leaf_tree(hist, d, k)
    if len(y):
        return leaf_tree(float(np.mean(y)), d, 0, float(len(y)))
    return leaf_tree(float(hint[0]), d, 0, float(hint[1]))


def _build_bottoms(jobs, entries, store, cfg, dataset, counter, hints):
    """Grow ``n_b`` bottom trees per bucket on a thread pool.

    Buckets are admitted while the rows they hold stay within the phase
    budget (at least one bucket is always admitted), so resident rows stay
    bounded however many workers run.
    """
    d, k, task = dataset.n_features, dataset.n_classes, dataset.task
    n_b = cfg.n_b
    results = {}
    budget = cfg.phase3_row_budget
    if budget is None:
        budget = max((e.n_rows for e in entries), default=0) + cfg.chunk_size
    cond = threading.Condition()
    state = {"rows": 0, "inflight": 0, "error": None}

    def grow(key, j, X, y, W, box):
        try:
            w = W[:, j] if cfg.bootstrap and len(y) else None
            if len(y) == 0 or (w is not None and w.sum() == 0):
                tree = _fallback_tree(y, d, k, task, hints[key])
            else:
                tree = build_tree(X, y, w, cfg.bottom_params,
                                  derive_seed(cfg.seed, 3, key[0], key[1], j),
                                  n_classes=k or None)
            results[(key, j)] = tree
        except BaseException as exc:  # surfaced after the pool drains
            with cond:
                state["error"] = exc
        finally:
            with cond:
                box["left"] -= 1
                if box["left"] == 0:
                    state["rows"] -= box["rows"]
                    state["inflight"] -= 1
                    if counter is not None:
                        counter.release(box["rows"])
                    cond.notify_all()

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for e in entries:
            with cond:
                while state["inflight"] > 0 and state["rows"] + e.n_rows > budget:
                    cond.wait()
                if state["error"] is not None:
                    break
                state["rows"] += e.n_rows
                state["inflight"] += 1
            if counter is not None:
                counter.add(e.n_rows)
            X, y, W = store.read_bucket(e.bucket_id)
            box = {"left": n_b, "rows": e.n_rows}
            for j in range(n_b):
                pool.submit(grow, e.bucket_id, j, X, y, W, box)
            del X, y, W
    if state["error"] is not None:
        raise state["error"]
    return results


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------

def _attach(dataset, counter, chunk_size):
    h = dataset.with_chunk_size(chunk_size)
    h.counter = counter
    return h


def _leaf_hints(top: TreeModel, k: int):
    """Subset label statistics per leaf label (for empty-bucket fallbacks)."""
    hints = {}
    for node in np.flatnonzero(top.feature < 0):
        hints[int(top.bucket[node])] = top.value[node]
    return hints


def grow_bottom_trees(tops, manifest: BucketManifest, store, dataset: DatasetHandle,
                      config: ForestConfig, counter: Optional[ResidentCounter] = None) -> list:
    """Phase 3: ``n_b`` bottom trees per bucket, attached to their top trees.

    Uses ``n_b``, ``bootstrap``, ``seed``, ``jobs`` and the bottom-tree
    parameters of ``config``.  Buckets without rows (or whose weights are
    all zero) get a single-leaf tree predicting the top-tree leaf's subset
    statistics.
    """
    k = dataset.n_classes
    hints = {}
    for t, top in enumerate(tops):
        for leaf, h in _leaf_hints(top, k).items():
            hints[(t, leaf)] = h
    results = _build_bottoms(config.jobs, manifest.entries, store, config, dataset, counter,
                             hints)
    units = []
    for t, top in enumerate(tops):
        bottoms = [[results[((t, leaf), j)] for j in range(config.n_b)]
                   for leaf in range(top.n_leaves)]
        units.append(TopUnit(top, bottoms))
    return units


def build_big_forest(dataset: DatasetHandle, config: ForestConfig,
                     counter: Optional[ResidentCounter] = None, store=None) -> ForestModel:
    """Train the top-tree/bottom-tree forest over a (possibly on-disk) dataset.

    ``store`` overrides the scratch store named in ``config`` (it is then
    left in place after training, which lets callers audit the buckets).
    """
    n = dataset.n_rows
    config.validate(n)
    cfg = config.resolved(n)
    counter = counter if counter is not None else ResidentCounter()
    handle = _attach(dataset, counter, cfg.chunk_size)
    k = dataset.n_classes
    own_store = store is None
    if own_store:
        store = make_store(cfg.store, cfg.scratch_dir, cfg.run_id)
    seconds, peaks = {}, {}

    # phase 1: random subsets and top trees
    t0 = time.perf_counter()
    counter.reset_peak()
    subsets = reservoir_sample_many(handle, [cfg.R] * cfg.n_top,
                                    [derive_seed(cfg.seed, 1, t) for t in range(cfg.n_top)])
    tops = []
    for s in subsets:
        mbar = estimate_leaf_threshold(cfg.M, len(s), n)
        tops.append(build_top_tree(s.X, s.y, mbar, cfg.lam, cfg.bottom_params.gain.measure,
                                   n_classes=k or None))
    for s in subsets:
        counter.release(len(s))
    del subsets
    seconds["sample_top"] = time.perf_counter() - t0
    peaks["sample_top"] = counter.peak

    # phase 2: distribution (plus re-split of oversized buckets)
    t0 = time.perf_counter()
    counter.reset_peak()
    manifest = distribute(tops, handle, store, cfg.n_b, cfg.seed, cfg.bootstrap)
    for t in range(cfg.n_top):
        tops[t] = _resplit_oversized(t, tops[t], manifest, store, cfg, handle, counter)
    manifest.entries.sort(key=lambda e: (e.top, e.leaf))
    seconds["distribute"] = time.perf_counter() - t0
    peaks["distribute"] = counter.peak

    # phase 3: bottom trees
    t0 = time.perf_counter()
    counter.reset_peak()
    units = grow_bottom_trees(tops, manifest, store, handle, cfg, counter)
    seconds["bottom"] = time.perf_counter() - t0
    peaks["bottom"] = counter.peak
    if own_store and cfg.store == "disk":
        store.cleanup()

    model = ForestModel(units, dataset.task, dataset.n_features, k, "woody",
                        {"config": cfg.echo()})
    model.report = TrainReport("woody", seconds, peaks, manifest, n,
                               write_buffer_rows=cfg.chunk_size)
    return model


def _trivial_top(d: int, k: int) -> TreeModel:
    t = leaf_tree(np.zeros(k) if k else 0.0, d, k)
    t.mode = "top"
    return t


def _bag(dataset, trees, cfg, scheme, seconds, peaks):
    d, k = dataset.n_features, dataset.n_classes
    units = [TopUnit(_trivial_top(d, k), [[tree]]) for tree in trees]
    model = ForestModel(units, dataset.task, d, k, scheme, {"config": cfg.echo()})
    model.report = TrainReport(scheme, seconds, peaks, None, dataset.n_rows)
    return model


def _grow_many(jobs, fn, count):
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(count)))


def build_subsets_forest(dataset: DatasetHandle, config: ForestConfig,
                         counter: Optional[ResidentCounter] = None) -> ForestModel:
    """One standard tree per random subset; rows outside the subsets are unused."""
    config.validate()
    n = dataset.n_rows
    size = min(config.subset_size or SUBSETS_DEFAULT_SIZE, n)
    cfg = replace(config, subset_size=size)
    counter = counter if counter is not None else ResidentCounter()
    handle = _attach(dataset, counter, cfg.chunk_size)
    T = cfg.total_trees
    t0 = time.perf_counter()
    counter.reset_peak()
    subsets = reservoir_sample_many(handle, [size] * T,
                                    [derive_seed(cfg.seed, 6, b) for b in range(T)])
    seconds = {"sample_top": time.perf_counter() - t0, "distribute": 0.0}
    peaks = {"sample_top": counter.peak, "distribute": 0}
    t0 = time.perf_counter()
    counter.reset_peak()
    k = dataset.n_classes or None

    def grow(b):
        s = subsets[b]
        return build_tree(s.X, s.y, None, cfg.bottom_params, derive_seed(cfg.seed, 7, b),
                          n_classes=k)

    trees = _grow_many(cfg.jobs, grow, T)
    for s in subsets:
        counter.release(len(s))
    seconds["bottom"] = time.perf_counter() - t0
    peaks["bottom"] = counter.peak
    model = _bag(dataset, trees, cfg, "subsets", seconds, peaks)
    model.meta["subset_rows"] = [len(s) for s in subsets]
    return model


def build_standard_forest(dataset: DatasetHandle, config: ForestConfig,
                          counter: Optional[ResidentCounter] = None) -> ForestModel:
    """Bagged fully grown trees over the whole (in-memory) dataset."""
    config.validate()
    cfg = config
    counter = counter if counter is not None else ResidentCounter()
    t0 = time.perf_counter()
    counter.reset_peak()
    X, y = dataset.read_all()
    n = len(y)
    counter.add(n)
    seconds = {"sample_top": 0.0, "distribute": time.perf_counter() - t0}
    peaks = {"sample_top": 0, "distribute": counter.peak}
    t0 = time.perf_counter()
    k = dataset.n_classes or None

    def grow(b):
        w = None
        if cfg.bootstrap:
            rng = np.random.default_rng(derive_seed(cfg.seed, 4, b))
            w = np.bincount(rng.integers(0, n, n), minlength=n)
        return build_tree(X, y, w, cfg.bottom_params, derive_seed(cfg.seed, 8, b), n_classes=k)

    trees = _grow_many(cfg.jobs, grow, cfg.total_trees)
    counter.release(n)
    seconds["bottom"] = time.perf_counter() - t0
    peaks["bottom"] = counter.peak
    return _bag(dataset, trees, cfg, "standard", seconds, peaks)


def train(dataset: DatasetHandle, config: ForestConfig, scheme: str = "woody",
          counter: Optional[ResidentCounter] = None) -> ForestModel:
    if scheme == "woody":
        return build_big_forest(dataset, config, counter)
    if scheme == "subsets":
        return build_subsets_forest(dataset, config, counter)
    if scheme == "standard":
        return build_standard_forest(dataset, config, counter)
    raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


# ---------------------------------------------------------------------------
# forest container
# ---------------------------------------------------------------------------

def _zinfo(name):
    zi = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    zi.compress_type = zipfile.ZIP_DEFLATED
    zi.external_attr = 0o644 << 16
    return zi


def _fmt(v):
    return "none" if v is None else str(v)


def forest_to_bytes(model: ForestModel) -> bytes:
    lines = [
        "format = canopy-forest",
        f"version = {FOREST_FORMAT_VERSION}",
        f"scheme = {model.scheme}",
        f"task = {model.task}",
        f"n_features = {model.n_features}",
        f"n_classes = {model.n_classes}",
        f"combiner = {model.combiner}",
        f"n_units = {len(model.units)}",
        f"n_trees = {model.n_trees}",
    ]
    for key, v in sorted(model.meta.get("config", {}).items()):
        lines.append(f"config.{key} = {_fmt(v)}")
    blobs = []
    for t, u in enumerate(model.units):
        name = f"trees/top-{t}.ctre"
        lines.append(f"unit.{t}.top = {name}")
        lines.append(f"unit.{t}.leaves = {u.top.n_leaves}")
        lines.append(f"unit.{t}.n_b = {len(u.bottoms[0])}")
        blobs.append((name, serialize(u.top)))
        for leaf, trees in enumerate(u.bottoms):
            for j, tree in enumerate(trees):
                bname = f"trees/top-{t}/leaf-{leaf}/bottom-{j}.ctre"
                lines.append(f"unit.{t}.bottom.{leaf}.{j} = {bname}")
                blobs.append((bname, serialize(tree)))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_zinfo("manifest.txt"), ("\n".join(lines) + "\n").encode())
        for name, blob in blobs:
            zf.writestr(_zinfo(name), blob)
    return buf.getvalue()


def save_forest(model: ForestModel, path) -> None:
    data = forest_to_bytes(model)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise StorageError(f"cannot write model {path}: {exc}") from exc


def _parse_manifest(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if " = " not in line:
            raise FormatError(f"manifest line {lineno} is not 'key = value'")
        key, value = line.split(" = ", 1)
        out[key.strip()] = value.strip()
    return out


def forest_from_bytes(data: bytes) -> ForestModel:
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
        man = _parse_manifest(zf.read("manifest.txt").decode())
    except (zipfile.BadZipFile, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"not a canopy forest container: {exc}") from exc
    if man.get("format") != "canopy-forest":
        raise FormatError("manifest does not describe a canopy forest")
    if man.get("version") != str(FOREST_FORMAT_VERSION):
        raise FormatError(f"unsupported forest version {man.get('version')}")
    try:
        task = man["task"]
        d, k = int(man["n_features"]), int(man["n_classes"])
        units = []
        for t in range(int(man["n_units"])):
            top = deserialize(zf.read(man[f"unit.{t}.top"]))
            n_b = int(man[f"unit.{t}.n_b"])
            bottoms = [[deserialize(zf.read(man[f"unit.{t}.bottom.{leaf}.{j}"]))
                        for j in range(n_b)] for leaf in range(top.n_leaves)]
            units.append(TopUnit(top, bottoms))
    except KeyError as exc:
        raise FormatError(f"manifest entry missing: {exc}") from exc
    for u in units:
        for tree in [u.top] + [b for bs in u.bottoms for b in bs]:
            if tree.n_features != d:
                raise FormatError("member tree disagrees on the number of features")
    config = {key[len("config."):]: v for key, v in man.items() if key.startswith("config.")}
    return ForestModel(units, task, d, k, man.get("scheme", "woody"), {"config": config})


def load_forest(path) -> ForestModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read model {path}: {exc}") from exc
    return forest_from_bytes(data)
