"""Datasets, chunked streaming, scratch stores and random subsets.

Binary dataset layout (little-endian)::

    magic "CNPY" | version u16 | task u8 | n_rows u64 | n_features u32 | k u32
    n_rows x (n_features x f32, label u32 | f64)

Bucket files reuse the layout and append a weights block of
``n_rows x n_b`` u32 bootstrap multiplicities.
"""

from __future__ import annotations

import csv
import math
import os
import shutil
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import (BucketLookupError, ConfigError, ParseError, SchemaError,
                     StorageError, StreamError, TruncationError)

MAGIC = b"CNPY"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHBQII")
TASKS = ("classification", "regression")
DEFAULT_CHUNK_SIZE = 100_000


def row_dtype(n_features: int, task: str) -> np.dtype:
    label = "<u4" if task == "classification" else "<f8"
    return np.dtype([("x", "<f4", (n_features,)), ("y", label)])


def _task_code(task: str) -> int:
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    return TASKS.index(task)


class ResidentCounter:
    """Counts training rows held in working memory, tracking the peak.

    Every component that materialises rows (chunks, reservoirs, bucket
    loads, write buffers) adds them here and releases them when done.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.current += int(n)
            if self.current > self.peak:
                self.peak = self.current

    def release(self, n: int) -> None:
        with self._lock:
            self.current -= int(n)

    def reset_peak(self) -> None:
        with self._lock:
            self.peak = self.current


class Chunk(NamedTuple):
    X: np.ndarray  # (m, d) float32
    y: np.ndarray  # (m,) int64 for classification, float64 for regression
    start: int     # index of the first row within the dataset


def _labels_out(y: np.ndarray, task: str) -> np.ndarray:
    return y.astype(np.int64) if task == "classification" else y.astype(np.float64)


@dataclass
class DatasetHandle:
    """A labelled dataset readable in chunks, backed by a file or by arrays."""

    source: object
    n_rows: int
    n_features: int
    task: str = "classification"
    n_classes: int = 0
    chunk_size: int = DEFAULT_CHUNK_SIZE
    counter: Optional[ResidentCounter] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_rows < 1 or self.n_features < 1:
            raise SchemaError("dataset needs at least one row and one feature")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        _task_code(self.task)

    @classmethod
    def from_arrays(cls, X, y, task="classification", n_classes=None,
                    chunk_size=DEFAULT_CHUNK_SIZE) -> "DatasetHandle":
        X = np.ascontiguousarray(X, dtype=np.float32)
        if X.ndim != 2:
            raise SchemaError("X must be 2-dimensional")
        if not np.all(np.isfinite(X)):
            raise SchemaError("features must be finite (missing values are rejected)")
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise SchemaError("y must have one label per row")
        if task == "classification":
            if not np.all(np.equal(np.mod(y, 1), 0)) or (y.size and y.min() < 0):
                raise SchemaError("class labels must be non-negative integers")
            y = y.astype(np.int64)
            k = int(y.max()) + 1 if n_classes is None else int(n_classes)
            if y.size and y.max() >= k:
                raise SchemaError(f"label {y.max()} outside [0, {k})")
        else:
            y = y.astype(np.float64)
            if not np.all(np.isfinite(y)):
                raise SchemaError("regression labels must be finite")
            k = 0
        return cls((X, y), X.shape[0], X.shape[1], task, k, chunk_size)

    @property
    def in_memory(self) -> bool:
        return isinstance(self.source, tuple)

    @property
    def path(self) -> Optional[Path]:
        return None if self.in_memory else Path(self.source)

    def with_chunk_size(self, chunk_size: int) -> "DatasetHandle":
        return DatasetHandle(self.source, self.n_rows, self.n_features, self.task,
                             self.n_classes, chunk_size, self.counter)

    def head(self, n: int) -> "DatasetHandle":
        """Handle restricted to the first ``n`` rows."""
        n = min(int(n), self.n_rows)
        if self.in_memory:
            X, y = self.source
            return DatasetHandle((X[:n], y[:n]), n, self.n_features, self.task,
                                 self.n_classes, self.chunk_size, self.counter)
        return DatasetHandle(self.source, n, self.n_features, self.task, self.n_classes,
                             self.chunk_size, self.counter)

    def iter_chunks(self) -> Iterator[Chunk]:
        return iter_chunks(self)

    def read_all(self):
        """Materialise every row (only for data known to fit in memory)."""
        if self.in_memory:
            X, y = self.source
            return X[:self.n_rows], y[:self.n_rows]
        parts = list(self.with_chunk_size(max(self.chunk_size, 1 << 16)).iter_chunks())
        return (np.concatenate([c.X for c in parts]), np.concatenate([c.y for c in parts]))


def iter_chunks(handle: DatasetHandle) -> Iterator[Chunk]:
    """Stream the dataset in file order, ``chunk_size`` rows at a time."""
    counter = handle.counter
    C = handle.chunk_size
    if handle.in_memory:
        X, y = handle.source
        for start in range(0, handle.n_rows, C):
            stop = min(start + C, handle.n_rows)
            if counter is not None:
                counter.add(stop - start)
            try:
                yield Chunk(X[start:stop], y[start:stop], start)
            finally:
                if counter is not None:
                    counter.release(stop - start)
        return
    dt = row_dtype(handle.n_features, handle.task)
    try:
        fh = open(handle.source, "rb")
    except OSError as exc:
        raise StreamError(f"cannot open {handle.source}: {exc}", 0) from exc
    with fh:
        fh.seek(HEADER.size)
        for start in range(0, handle.n_rows, C):
            m = min(C, handle.n_rows - start)
            offset = HEADER.size + start * dt.itemsize
            try:
                buf = fh.read(m * dt.itemsize)
            except OSError as exc:
                raise StreamError(f"read failed: {exc}", offset) from exc
            if len(buf) != m * dt.itemsize:
                raise StreamError("unexpected end of data", offset + len(buf))
            rec = np.frombuffer(buf, dtype=dt)
            if counter is not None:
                counter.add(m)
            try:
                yield Chunk(np.ascontiguousarray(rec["x"]), _labels_out(rec["y"], handle.task),
                            start)
            finally:
                if counter is not None:
                    counter.release(m)


# ---------------------------------------------------------------------------
# binary files
# ---------------------------------------------------------------------------

def _read_header(fh, path):
    raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise TruncationError(f"{path}: file too short for a dataset header")
    magic, version, task_code, n_rows, d, k = HEADER.unpack(raw)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {version}")
    if task_code >= len(TASKS):
        raise SchemaError(f"{path}: unknown task tag {task_code}")
    return TASKS[task_code], n_rows, d, k


class DatasetWriter:
    """Append rows to a binary dataset file; the header is patched on close."""

    def __init__(self, path, n_features, task="classification", n_classes=None):
        self.path = Path(path)
        self.n_features = int(n_features)
        self.task = task
        self._fixed_k = n_classes
        self._max_label = -1
        self.n_rows = 0
        self._dt = row_dtype(self.n_features, task)
        _task_code(task)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "wb")
            self._fh.write(self._header(0, 0))
        except OSError as exc:
            raise StorageError(f"cannot write {self.path}: {exc}") from exc

    def _header(self, n_rows, k):
        return HEADER.pack(MAGIC, FORMAT_VERSION, _task_code(self.task), n_rows,
                           self.n_features, k)

    def append(self, X, y) -> None:
        rec = np.empty(len(y), dtype=self._dt)
        rec["x"] = X
        rec["y"] = y
        if self.task == "classification" and len(y):
            self._max_label = max(self._max_label, int(np.max(y)))
        try:
            self._fh.write(rec.tobytes())
        except OSError as exc:
            raise StorageError(f"write to {self.path} failed: {exc}") from exc
        self.n_rows += len(y)

    def close(self) -> "DatasetHandle":
        if self.task == "classification":
            k = self._fixed_k if self._fixed_k is not None else self._max_label + 1
        else:
            k = 0
        try:
            self._fh.seek(0)
            self._fh.write(self._header(self.n_rows, k))
            self._fh.close()
        except OSError as exc:
            raise StorageError(f"cannot finalise {self.path}: {exc}") from exc
        return DatasetHandle(str(self.path), self.n_rows, self.n_features, self.task, k)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self._fh.closed:
            self.close()


def write_dataset(path, X, y, task="classification", n_classes=None) -> DatasetHandle:
    X = np.asarray(X, dtype=np.float32)
    with DatasetWriter(path, X.shape[1], task, n_classes) as w:
        w.append(X, y)
    return open_dataset(path)


def open_dataset(path, format="binary", task=None, chunk_size=DEFAULT_CHUNK_SIZE,
                 binary_path=None, has_header=None) -> DatasetHandle:
    """Open a dataset file without materialising it.

    CSV input (label in the last column, optional header) is converted once
    to the binary format at ``binary_path`` (default: ``<path>.cnpy``).
    """
    if format == "csv":
        out = binary_path if binary_path is not None else str(path) + ".cnpy"
        ingest_csv(path, out, task or "classification", has_header=has_header)
        return open_dataset(out, "binary", task, chunk_size)
    if format != "binary":
        raise ConfigError(f"unknown dataset format {format!r}")
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as fh:
            file_task, n_rows, d, k = _read_header(fh, path)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if task is not None and task != file_task:
        raise SchemaError(f"{path} holds a {file_task} dataset, not {task}")
    if n_rows == 0:
        raise ParseError(f"{path}: dataset has no rows")
    expected = HEADER.size + n_rows * row_dtype(d, file_task).itemsize
    if size < expected:
        raise TruncationError(f"{path}: header declares {n_rows} rows but payload holds "
                              f"{(size - HEADER.size) // row_dtype(d, file_task).itemsize}")
    if size > expected:
        raise TruncationError(f"{path}: {size - expected} trailing bytes after payload")
    return DatasetHandle(str(path), n_rows, d, file_task, k, chunk_size)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest_csv(csv_path, out_path, task="classification", chunk_size=DEFAULT_CHUNK_SIZE,
               has_header=None) -> DatasetHandle:
    """Convert a numeric CSV (label last) to the binary format in one pass.

    A first line in which every cell is non-numeric is taken as a header
    unless ``has_header`` says otherwise.  Missing or non-finite values are
    errors.
    """
    _task_code(task)
    try:
        fh = open(csv_path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {csv_path}: {exc}") from exc
    writer = None
    with fh:
        reader = csv.reader(fh)
        buf_x, buf_y = [], []
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                header = has_header
                if header is None:
                    header = not any(_is_number(c) for c in row)
                width = len(row)
                if width < 2:
                    raise ParseError("need at least one feature column and a label", lineno)
                writer = DatasetWriter(out_path, width - 1, task)
                if header:
                    continue
            if len(row) != width:
                raise ParseError(f"expected {width} columns, found {len(row)}", lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_number(c))
                raise ParseError(f"non-numeric value {bad!r}", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("missing or non-finite value", lineno)
            label = vals[-1]
            if task == "classification" and (label < 0 or not label.is_integer()):
                raise SchemaError(f"row {lineno}: class label {row[-1]!r} is not a "
                                  "non-negative integer")
            buf_x.append(vals[:-1])
            buf_y.append(label)
            if len(buf_y) >= chunk_size:
                writer.append(np.array(buf_x, dtype=np.float32), np.array(buf_y))
                buf_x, buf_y = [], []
        if writer is None:
            raise ParseError(f"{csv_path}: empty file")
        if buf_y:
            writer.append(np.array(buf_x, dtype=np.float32), np.array(buf_y))
        if writer.n_rows == 0:
            writer.close()
            os.unlink(out_path)
            raise ParseError(f"{csv_path}: no data rows")
        writer.close()
    return open_dataset(out_path)


# ---------------------------------------------------------------------------
# random subsets
# ---------------------------------------------------------------------------

@dataclass
class RandomSubset:
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray   # source row indices, ascending
    requested_size: int
    seed: int

    def __len__(self):
        return len(self.y)


class _Reservoir:
    """Algorithm R over a stream, vectorised per chunk."""

    def __init__(self, size, d, y_dtype, seed, counter):
        self.size = int(size)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.X = np.empty((0, d), dtype=np.float32)
        self.y = np.empty(0, dtype=y_dtype)
        self.idx = np.empty(0, dtype=np.int64)
        self.counter = counter
        self._filled = 0
        self._cap_X = None

    def offer(self, chunk: Chunk) -> None:
        m = len(chunk.y)
        take = min(self.size - self._filled, m)
        if take > 0:
            if self._cap_X is None:
                self._cap_X = np.empty((self.size, chunk.X.shape[1]), dtype=np.float32)
                self._cap_y = np.empty(self.size, dtype=chunk.y.dtype)
                self._cap_i = np.empty(self.size, dtype=np.int64)
            lo = self._filled
            self._cap_X[lo:lo + take] = chunk.X[:take]
            self._cap_y[lo:lo + take] = chunk.y[:take]
            self._cap_i[lo:lo + take] = np.arange(chunk.start, chunk.start + take)
            self._filled += take
            if self.counter is not None:
                self.counter.add(take)
        if take >= m:
            return
        # row with global index t replaces slot j ~ U{0..t} when j < size
        t = np.arange(chunk.start + take, chunk.start + m, dtype=np.int64)
        j = self.rng.integers(0, t + 1)
        hit = np.flatnonzero(j < self.size)
        if hit.size == 0:
            return
        slots = j[hit]
        # later rows overwrite earlier ones that drew the same slot
        _, last = np.unique(slots[::-1], return_index=True)
        keep = hit[::-1][last]
        local = keep + take
        self._cap_X[slots[::-1][last]] = chunk.X[local]
        self._cap_y[slots[::-1][last]] = chunk.y[local]
        self._cap_i[slots[::-1][last]] = t[keep]

    def result(self) -> RandomSubset:
        n = self._filled
        order = np.argsort(self._cap_i[:n], kind="stable")
        return RandomSubset(self._cap_X[:n][order], self._cap_y[:n][order],
                            self._cap_i[:n][order], self.size, self.seed)


def reservoir_sample_many(handle: DatasetHandle, sizes, seeds) -> list:
    """Draw several independent uniform subsets in one streaming pass.

    Each subset is sampled without replacement by its own RNG stream; at
    most ``sum(sizes)`` reservoir rows plus one chunk are resident.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ConfigError("subset size must be >= 1")
    y_dtype = np.int64 if handle.task == "classification" else np.float64
    res = [_Reservoir(s, handle.n_features, y_dtype, seed, handle.counter)
           for s, seed in zip(sizes, seeds)]
    for chunk in iter_chunks(handle):
        for r in res:
            r.offer(chunk)
    return [r.result() for r in res]


def reservoir_sample(handle: DatasetHandle, R: int, seed) -> RandomSubset:
    """Uniform sample of ``min(R, n_rows)`` distinct rows in one pass."""
    return reservoir_sample_many(handle, [R], [seed])[0]


# ---------------------------------------------------------------------------
# scratch stores for leaf buckets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BucketReceipt:
    bucket_id: object
    n_rows: int
    location: str


class _MemoryWriter:
    def __init__(self, store, bucket_id, n_features, task):
        self.store, self.bucket_id = store, bucket_id
        self.d, self.task = n_features, task
        self.parts = []
        self.n_rows = 0

    def append(self, X, y, W):
        W = np.array(W, dtype=np.uint32)
        self.parts.append((np.array(X, dtype=np.float32), np.array(y),
                           W[:, None] if W.ndim == 1 else W))
        self.n_rows += len(y)

    def close(self):
        if self.parts:
            X = np.concatenate([p[0] for p in self.parts])
            y = np.concatenate([p[1] for p in self.parts])
            W = np.concatenate([p[2] for p in self.parts])
        else:
            X = np.empty((0, self.d), dtype=np.float32)
            y = np.empty(0, dtype=np.int64 if self.task == "classification" else np.float64)
            W = np.empty((0, 0), dtype=np.uint32)
        if W.ndim == 1:
            W = W[:, None]
        self.store._buckets[self.bucket_id] = (X, y, W)
        return BucketReceipt(self.bucket_id, self.n_rows, "memory")


class _DiskWriter:
    """Appends to a bucket file; handles are opened per append so thousands
    of buckets can be in flight without exhausting file descriptors."""

    def __init__(self, path, n_features, task, n_classes):
        self.path = path
        self.task, self.n_classes, self.d = task, n_classes, n_features
        self.wpath = path.with_suffix(".weights.tmp")
        self.n_rows = 0
        self.n_b = None
        self._dt = row_dtype(n_features, task)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, _task_code(task), 0, n_features,
                                     n_classes))
            open(self.wpath, "wb").close()
        except OSError as exc:
            raise StorageError(f"cannot write bucket {path}: {exc}") from exc

    def append(self, X, y, W):
        W = np.asarray(W, dtype="<u4")
        if W.ndim == 1:
            W = W[:, None]
        if self.n_b is None:
            self.n_b = W.shape[1]
        rec = np.empty(len(y), dtype=self._dt)
        rec["x"] = X
        rec["y"] = y
        try:
            with open(self.path, "ab") as fh:
                fh.write(rec.tobytes())
            with open(self.wpath, "ab") as wh:
                wh.write(np.ascontiguousarray(W).tobytes())
        except OSError as exc:
            raise StorageError(f"write to bucket {self.path} failed: {exc}") from exc
        self.n_rows += len(y)

    def close(self):
        try:
            with open(self.path, "r+b") as fh:
                fh.seek(0, os.SEEK_END)
                with open(self.wpath, "rb") as wh:
                    shutil.copyfileobj(wh, fh, 1 << 22)
                fh.seek(0)
                fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, _task_code(self.task),
                                     self.n_rows, self.d, self.n_classes))
            os.unlink(self.wpath)
        except OSError as exc:
            raise StorageError(f"cannot finalise bucket {self.path}: {exc}") from exc
        return BucketReceipt(None, self.n_rows, str(self.path))


class ScratchStore:
    """Holds leaf buckets: rows, labels and per-bottom-tree weights."""

    kind = "abstract"

    def writer(self, bucket_id, n_features, task="classification", n_classes=0):
        raise NotImplementedError

    def write_bucket(self, bucket_id, X, y, weights, task=None, n_classes=None) -> BucketReceipt:
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y)
        if task is None:
            task = "classification" if np.issubdtype(y.dtype, np.integer) else "regression"
        if n_classes is None:
            n_classes = int(y.max()) + 1 if task == "classification" and y.size else 0
        w = self.writer(bucket_id, X.shape[1], task, n_classes)
        w.append(X, y, weights)
        return w.close()

    def read_bucket(self, bucket_id):
        raise NotImplementedError

    def iter_bucket(self, bucket_id, chunk_size):
        X, y, W = self.read_bucket(bucket_id)
        for s in range(0, len(y), chunk_size):
            yield X[s:s + chunk_size], y[s:s + chunk_size], W[s:s + chunk_size]


class MemoryStore(ScratchStore):
    kind = "memory"

    def __init__(self):
        self._buckets = {}

    def writer(self, bucket_id, n_features, task="classification", n_classes=0):
        if bucket_id in self._buckets:
            raise StorageError(f"bucket {bucket_id!r} already written")
        self._buckets[bucket_id] = None
        return _MemoryWriter(self, bucket_id, n_features, task)

    def read_bucket(self, bucket_id):
        try:
            X, y, W = self._buckets[bucket_id]
        except (KeyError, TypeError):
            raise BucketLookupError(f"unknown bucket {bucket_id!r}") from None
        return X.copy(), y.copy(), W.copy()

    def bucket_rows(self, bucket_id) -> int:
        if self._buckets.get(bucket_id) is None:
            raise BucketLookupError(f"unknown bucket {bucket_id!r}")
        return len(self._buckets[bucket_id][1])

    def delete(self, bucket_id):
        self._buckets.pop(bucket_id, None)

    def rename(self, old, new):
        self._buckets[new] = self._buckets.pop(old)

    def location(self, bucket_id):
        return "memory"


class DiskStore(ScratchStore):
    """Bucket files under ``<root>/<run_id>/toptree-<t>/bucket-<leaf>.bin``."""

    kind = "disk"

    def __init__(self, root, run_id="run"):
        self.root = Path(root)
        self.run_dir = self.root / str(run_id)
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            probe = self.run_dir / ".probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise StorageError(f"scratch directory {self.run_dir} is not writable: {exc}") from exc

    def path_for(self, bucket_id) -> Path:
        if isinstance(bucket_id, tuple) and len(bucket_id) == 2:
            return self.run_dir / f"toptree-{bucket_id[0]}" / f"bucket-{bucket_id[1]}.bin"
        return self.run_dir / f"bucket-{bucket_id}.bin"

    def writer(self, bucket_id, n_features, task="classification", n_classes=0):
        path = self.path_for(bucket_id)
        if path.exists():
            raise StorageError(f"bucket {bucket_id!r} already written")
        return _DiskWriter(path, n_features, task, n_classes)

    def _open(self, bucket_id):
        path = self.path_for(bucket_id)
        if not path.exists():
            raise BucketLookupError(f"unknown bucket {bucket_id!r}")
        fh = open(path, "rb")
        task, n, d, k = _read_header(fh, path)
        dt = row_dtype(d, task)
        size = path.stat().st_size
        rest = size - HEADER.size - n * dt.itemsize
        if n == 0:
            n_b = 0
        elif rest < 0 or rest % (4 * n):
            fh.close()
            raise TruncationError(f"bucket {path} is truncated")
        else:
            n_b = rest // (4 * n)
        return fh, task, n, d, dt, n_b

    def bucket_rows(self, bucket_id) -> int:
        fh, _, n, *_ = self._open(bucket_id)
        fh.close()
        return n

    def read_bucket(self, bucket_id):
        fh, task, n, d, dt, n_b = self._open(bucket_id)
        with fh:
            rec = np.frombuffer(fh.read(n * dt.itemsize), dtype=dt)
            W = np.frombuffer(fh.read(n * n_b * 4), dtype="<u4").reshape(n, n_b)
        return np.ascontiguousarray(rec["x"]), _labels_out(rec["y"], task), W.astype(np.uint32)

    def iter_bucket(self, bucket_id, chunk_size):
        fh, task, n, d, dt, n_b = self._open(bucket_id)
        with fh:
            wbase = HEADER.size + n * dt.itemsize
            for s in range(0, n, chunk_size):
                m = min(chunk_size, n - s)
                fh.seek(HEADER.size + s * dt.itemsize)
                rec = np.frombuffer(fh.read(m * dt.itemsize), dtype=dt)
                fh.seek(wbase + s * n_b * 4)
                W = np.frombuffer(fh.read(m * n_b * 4), dtype="<u4").reshape(m, n_b)
                yield np.ascontiguousarray(rec["x"]), _labels_out(rec["y"], task), W.astype(np.uint32)

    def delete(self, bucket_id):
        self.path_for(bucket_id).unlink(missing_ok=True)

    def rename(self, old, new):
        dst = self.path_for(new)
        dst.parent.mkdir(parents=True, exist_ok=True)
        os.replace(self.path_for(old), dst)

    def location(self, bucket_id):
        return str(self.path_for(bucket_id))

    def cleanup(self):
        shutil.rmtree(self.run_dir, ignore_errors=True)


def make_store(kind: str, scratch_dir=None, run_id="run") -> ScratchStore:
    if kind == "memory":
        return MemoryStore()
    if kind == "disk":
        root = scratch_dir or os.environ.get("CANOPY_SCRATCH")
        if not root:
            raise ConfigError("disk store needs --scratch-dir or CANOPY_SCRATCH")
        return DiskStore(root, run_id)
    raise ConfigError(f"unknown store kind {kind!r}")


def write_bucket(store: ScratchStore, bucket_id, X, y, weights, **kw) -> BucketReceipt:
    return store.write_bucket(bucket_id, X, y, weights, **kw)


def read_bucket(store: ScratchStore, bucket_id):
    return store.read_bucket(bucket_id)
