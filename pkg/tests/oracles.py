"""Brute-force reference implementations used by the tests.

Plain Python lists and floats only; nothing here imports the package.
Gains follow the documented float formula term by term so that equal
candidates compare equal, and candidates are visited in (feature,
threshold) order with a strict ``>`` so ties go to the lowest pair.
"""

import math
import struct


def f32(v):
    return struct.unpack("<f", struct.pack("<f", v))[0]


def gini_of(counts, w):
    s = 0.0
    for c in counts:
        p = c / w
        s = s + p * p
    return 1.0 - s


def entropy_of(counts, w):
    e = 0.0
    for c in counts:
        if c > 0:
            p = c / w
            e = e - p * math.log2(p)
    return e


def histogram(labels, k):
    h = [0.0] * k
    for c in labels:
        h[c] += 1.0
    return h


def midpoint(lo, hi):
    t = f32((lo + hi) * 0.5)
    return lo if t >= hi else t


def best_split(X, y, k, lam=0.0, measure="gini"):
    """Exhaustive search; returns (feature, threshold, gain, n_left, n_right) or None."""
    q = gini_of if measure == "gini" else entropy_of
    n = len(y)
    W = float(n)
    total = histogram(y, k)
    qs = q(total, W)
    best = None
    for f in range(len(X[0])):
        col = [row[f] for row in X]
        values = sorted(set(col))
        for lo, hi in zip(values, values[1:]):
            thr = midpoint(lo, hi)
            left = [0.0] * k
            for v, c in zip(col, y):
                if v <= thr:
                    left[c] += 1.0
            right = [t - l for t, l in zip(total, left)]
            wl = float(sum(left))
            wr = W - wl
            g = qs - (wl / W) * q(left, wl) - (wr / W) * q(right, wr)
            g = (1.0 - lam) * g - lam * abs(wl - wr) / W
            if best is None or g > best[2]:
                best = (f, thr, g, int(wl), int(wr))
    return best


def majority(labels, k):
    h = histogram(labels, k)
    return max(range(k), key=lambda c: (h[c], -c))


def cart(X, y, k):
    """Fully grown CART tree as nested tuples: ('leaf', c) or ('split', f, thr, l, r)."""
    if len(set(y)) <= 1 or len(y) < 2:
        return ("leaf", majority(y, k))
    s = best_split(X, y, k)
    if s is None:
        return ("leaf", majority(y, k))
    f, thr = s[0], s[1]
    li = [i for i in range(len(y)) if X[i][f] <= thr]
    ri = [i for i in range(len(y)) if X[i][f] > thr]
    return ("split", f, thr,
            cart([X[i] for i in li], [y[i] for i in li], k),
            cart([X[i] for i in ri], [y[i] for i in ri], k))


def cart_predict(node, x):
    while node[0] == "split":
        node = node[3] if f32(x[node[1]]) <= node[2] else node[4]
    return node[1]


def to_f32_rows(X):
    return [[f32(float(v)) for v in row] for row in X]
