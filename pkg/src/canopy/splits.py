"""Impurity measures, information gain and best-split search.

All counts are *weighted*: bootstrap multiplicities enter histograms and
set sizes as integer weights.  Gains are maximised with exact float
comparison; equal gains are broken by lowest feature index, then lowest
threshold.  The arithmetic here is kept in lock-step with ``_ckernels.pyx``
so both backends make identical choices on classification data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ._rng import SplitMix64
from .errors import ConfigError, DomainError

MEASURES = ("gini", "entropy", "variance")
CRITERION_CODES = {"gini": 0, "entropy": 1, "variance": 2}


@dataclass(frozen=True)
class RegressionSummary:
    """Sufficient statistics of a weighted set of real labels."""

    weight: float
    mean: float
    sq_dev: float  # sum of w * (y - mean)**2

    @classmethod
    def from_labels(cls, labels, weights=None) -> "RegressionSummary":
        y = np.asarray(labels, dtype=np.float64)
        w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
        total = float(w.sum())
        if total <= 0:
            raise DomainError("empty label summary")
        mean = float((w * y).sum() / total)
        return cls(total, mean, float((w * (y - mean) ** 2).sum()))

    @property
    def size(self) -> float:
        return self.weight


LabelSummary = Union[Sequence[float], np.ndarray, RegressionSummary]


def _size(summary: LabelSummary) -> float:
    if isinstance(summary, RegressionSummary):
        return summary.weight
    return float(np.sum(summary))


def _check_measure(measure: str) -> None:
    if measure not in MEASURES:
        raise ConfigError(f"unknown impurity measure {measure!r}")


def impurity(measure: str, summary: LabelSummary) -> float:
    """Impurity of a class histogram (gini/entropy) or regression summary.

    Entropy is measured in bits.  Variance is the weighted population
    variance.
    """
    _check_measure(measure)
    if measure == "variance":
        if not isinstance(summary, RegressionSummary):
            summary = RegressionSummary.from_labels(summary)
        if summary.weight <= 0:
            raise DomainError("empty label summary")
        return summary.sq_dev / summary.weight
    if isinstance(summary, RegressionSummary):
        raise DomainError(f"{measure} needs a class histogram")
    counts = np.asarray(summary, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 0):
        raise DomainError("class histogram must be non-empty and non-negative")
    w = float(counts.sum())
    if w <= 0:
        raise DomainError("empty label summary")
    if measure == "gini":
        s = 0.0
        for c in counts:
            p = c / w
            s += p * p
        return 1.0 - s
    e = 0.0
    for c in counts:
        if c > 0:
            p = c / w
            e -= p * math.log2(p)
    return e


def gain(s_summary: LabelSummary, l_summary: LabelSummary, r_summary: LabelSummary,
         measure: str) -> float:
    """Impurity decrease Q(S) - |L|/|S| Q(L) - |R|/|S| Q(R)."""
    ws, wl, wr = _size(s_summary), _size(l_summary), _size(r_summary)
    if wl <= 0 or wr <= 0:
        raise DomainError("both sides of a split must be non-empty")
    if not math.isclose(wl + wr, ws, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError(f"|L| + |R| = {wl + wr} does not match |S| = {ws}")
    return (impurity(measure, s_summary)
            - (wl / ws) * impurity(measure, l_summary)
            - (wr / ws) * impurity(measure, r_summary))


def _check_lambda(lam: float) -> None:
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")


def adapted_gain(s_summary: LabelSummary, l_summary: LabelSummary, r_summary: LabelSummary,
                 measure: str, lam: float) -> float:
    """Gain blended with a size-imbalance penalty.

    ``(1 - lam) * gain - lam * abs(|L| - |R|) / |S|``; ``lam=0`` is plain
    gain, ``lam=1`` ignores labels entirely.
    """
    _check_lambda(lam)
    ws, wl, wr = _size(s_summary), _size(l_summary), _size(r_summary)
    g = gain(s_summary, l_summary, r_summary, measure)
    return (1.0 - lam) * g - lam * abs(wl - wr) / ws


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    left_count: float
    right_count: float
    gain: float


@dataclass(frozen=True)
class GainConfig:
    lam: float = 0.0
    measure: str = "gini"
    features_per_node: Union[int, str] = "all"

    def __post_init__(self):
        _check_lambda(self.lam)
        _check_measure(self.measure)
        f = self.features_per_node
        if isinstance(f, str):
            if f not in ("all", "sqrt"):
                raise ConfigError(f"features_per_node must be an int, 'all' or 'sqrt', got {f!r}")
        elif int(f) < 1:
            raise ConfigError("features_per_node must be >= 1")

    def resolve_features(self, d: int) -> int:
        f = self.features_per_node
        if f == "all":
            return d
        if f == "sqrt":
            return max(1, int(math.sqrt(d)))
        if int(f) > d:
            raise ConfigError(f"features_per_node={f} exceeds d={d}")
        return int(f)


def midpoint_threshold(lo: np.float32, hi: np.float32) -> np.float32:
    """float32 midpoint of two distinct values, kept strictly below ``hi``."""
    thr = np.float32((float(lo) + float(hi)) * 0.5)
    if thr >= hi:
        thr = np.float32(lo)
    return thr


# ---------------------------------------------------------------------------
# vectorised per-position impurity (same operation order as the C kernel)
# ---------------------------------------------------------------------------

def _class_impurity_rows(counts: np.ndarray, w: np.ndarray, criterion: int) -> np.ndarray:
    if criterion == 0:
        s = np.zeros_like(w)
        for c in range(counts.shape[1]):
            p = counts[:, c] / w
            s = s + p * p
        return 1.0 - s
    e = np.zeros_like(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        for c in range(counts.shape[1]):
            p = counts[:, c] / w
            e = e - np.where(counts[:, c] > 0, p * np.log2(p), 0.0)
    return e


def _variance_rows(s: np.ndarray, sq: np.ndarray, w: np.ndarray) -> np.ndarray:
    m = s / w
    return np.maximum(sq / w - m * m, 0.0)


def node_impurity(stats: np.ndarray, criterion: int) -> float:
    """Impurity from node totals: histogram, or (W, sum wy, sum wy^2)."""
    if criterion == 2:
        w, s, sq = stats
        return float(_variance_rows(np.array([s]), np.array([sq]), np.array([w]))[0])
    w = np.array([stats.sum()])
    return float(_class_impurity_rows(stats[None, :], w, criterion)[0])


def _search(X, y, w, samples, stats, criterion, lam, max_features, min_leaf, rng,
            known_const):
    """Best split of the rows ``samples`` (all with positive weight).

    ``stats`` holds the node totals (class histogram, or W/sum/sumsq for
    regression).  ``known_const`` is a bool mask of features already known
    constant at this node; newly discovered constant features are marked in
    place.  Features are visited in a lazily drawn random permutation until
    ``max_features`` non-constant ones have been evaluated; a draw is
    consumed per visited feature, whether constant or not.

    Returns (feature, threshold, gain, w_left, w_right) or None.
    """
    d = X.shape[1]
    regression = criterion == 2
    if regression:
        W = stats[0]
    else:
        W = stats.sum()
    q_parent = node_impurity(stats, criterion)
    ws_all = w[samples]
    y_all = y[samples]
    if not regression:
        y_all = y_all.astype(np.intp)
    feats = list(range(d))
    best = None
    found = 0
    i = 0
    while i < d and found < max_features:
        if max_features < d:
            j = i + rng.below(d - i)
            feats[i], feats[j] = feats[j], feats[i]
        f = feats[i]
        i += 1
        if known_const[f]:
            continue
        xf = X[samples, f]
        order = np.argsort(xf, kind="stable")
        xs = xf[order]
        if xs[-1] <= xs[0]:
            known_const[f] = True
            continue
        found += 1
        ws = ws_all[order]
        pos = np.flatnonzero(xs[:-1] < xs[1:])
        wl_all = np.cumsum(ws)
        wl = wl_all[pos]
        wr = W - wl
        ok = (wl >= min_leaf) & (wr >= min_leaf)
        if not ok.all():
            pos, wl, wr = pos[ok], wl[ok], wr[ok]
        if pos.size == 0:
            continue
        ys = y_all[order]
        if regression:
            wy = ws * ys
            sl = np.cumsum(wy)[pos]
            sql = np.cumsum(wy * ys)[pos]
            ql = _variance_rows(sl, sql, wl)
            qr = _variance_rows(stats[1] - sl, stats[2] - sql, wr)
        else:
            k = stats.shape[0]
            counts = np.zeros((xs.shape[0], k))
            counts[np.arange(xs.shape[0]), ys] = ws
            np.cumsum(counts, axis=0, out=counts)
            cl = counts[pos]
            ql = _class_impurity_rows(cl, wl, criterion)
            qr = _class_impurity_rows(stats[None, :] - cl, wr, criterion)
        g = q_parent - (wl / W) * ql - (wr / W) * qr
        g = (1.0 - lam) * g - lam * np.abs(wl - wr) / W
        j = int(np.argmax(g))
        gj = float(g[j])
        p = int(pos[j])
        thr = midpoint_threshold(xs[p], xs[p + 1])
        if (best is None or gj > best[2]
                or (gj == best[2] and (f < best[0] or (f == best[0] and thr < best[1])))):
            best = (f, thr, gj, float(wl[j]), float(wr[j]))
    return best


def best_split(X, y, weights=None, config: GainConfig = GainConfig(), rng=None,
               n_classes: Optional[int] = None, min_samples_leaf: float = 1
               ) -> Optional[SplitCandidate]:
    """Best axis-aligned split of a node's rows, or None if no feature splits.

    Thresholds sit at float32 midpoints between consecutive distinct values;
    rows with ``x[feature] <= threshold`` go left.  ``weights`` are bootstrap
    multiplicities (zero-weight rows are ignored).  ``rng`` is a
    :class:`SplitMix64` or an int seed; it is only consulted when fewer than
    all features are sampled.
    """
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 2:
        raise DomainError("X must be 2-dimensional")
    n, d = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise DomainError("weights must be a non-negative vector, one per row")
    samples = np.flatnonzero(w > 0)
    if samples.size < 2:
        return None
    criterion = CRITERION_CODES[config.measure]
    if criterion == 2:
        yv = np.asarray(y, dtype=np.float64)
        ws, ys = w[samples], yv[samples]
        wy = ws * ys
        stats = np.array([ws.sum(), wy.sum(), (wy * ys).sum()])
    else:
        yv = np.asarray(y, dtype=np.intp)
        k = int(n_classes) if n_classes is not None else int(yv.max()) + 1
        stats = np.bincount(yv[samples], weights=w[samples], minlength=k).astype(np.float64)
    if not isinstance(rng, SplitMix64):
        rng = SplitMix64(0 if rng is None else rng)
    F = config.resolve_features(d)
    known = np.zeros(d, dtype=bool)
    res = _search(X, yv, w, samples, stats, criterion, config.lam, F, min_samples_leaf,
                  rng, known)
    if res is None:
        return None
    f, thr, g, wl, wr = res
    return SplitCandidate(int(f), float(thr), _intish(wl), _intish(wr), g)


def _intish(v: float):
    return int(v) if float(v).is_integer() else v
