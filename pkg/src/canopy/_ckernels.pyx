# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree-construction and routing kernels.

Same algorithm as ``_pykernels.py``: explicit LIFO stack, lazily drawn
feature permutation from SplitMix64, exact gain comparison with
lowest-(feature, threshold) tie-break.  The build loop runs without the
GIL so bottom trees can be grown from a thread pool.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, log, log2
from libc.stdlib cimport free, malloc, realloc
from libc.string cimport memcpy, memset
from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t

cnp.import_array()

NAME = "cython"

ctypedef cnp.npy_intp intp


cdef struct Record:
    intp start
    intp end
    int depth
    intp parent
    int is_left


cdef inline uint64_t rng_next(uint64_t* state) noexcept nogil:
    state[0] += 0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


# --- introsort of (value, sample) pairs, after the scheme used by scikit-learn

cdef inline void swap(float* Xf, intp* s, intp i, intp j) noexcept nogil:
    Xf[i], Xf[j] = Xf[j], Xf[i]
    s[i], s[j] = s[j], s[i]


cdef inline float median3(float* Xf, intp n) noexcept nogil:
    cdef float a = Xf[0], b = Xf[n / 2], c = Xf[n - 1]
    if a < b:
        if b < c:
            return b
        elif a < c:
            return c
        return a
    elif b < c:
        if a < c:
            return a
        return c
    return b


cdef void introsort(float* Xf, intp* s, intp n, int maxd) noexcept nogil:
    cdef float pivot
    cdef intp i, l, r
    while n > 1:
        if maxd <= 0:
            heapsort(Xf, s, n)
            return
        maxd -= 1
        pivot = median3(Xf, n)
        i = l = 0
        r = n
        while i < r:
            if Xf[i] < pivot:
                swap(Xf, s, i, l)
                i += 1
                l += 1
            elif Xf[i] > pivot:
                r -= 1
                swap(Xf, s, i, r)
            else:
                i += 1
        introsort(Xf, s, l, maxd)
        Xf += r
        s += r
        n -= r


cdef inline void sift_down(float* Xf, intp* s, intp start, intp end) noexcept nogil:
    cdef intp child, maxind, root = start
    while True:
        child = root * 2 + 1
        maxind = root
        if child < end and Xf[maxind] < Xf[child]:
            maxind = child
        if child + 1 < end and Xf[maxind] < Xf[child + 1]:
            maxind = child + 1
        if maxind == root:
            break
        swap(Xf, s, root, maxind)
        root = maxind


cdef void heapsort(float* Xf, intp* s, intp n) noexcept nogil:
    cdef intp start = (n - 2) / 2, end = n
    while True:
        sift_down(Xf, s, start, end)
        if start == 0:
            break
        start -= 1
    end = n - 1
    while end > 0:
        swap(Xf, s, 0, end)
        sift_down(Xf, s, 0, end)
        end -= 1


cdef inline void sort_pairs(float* Xf, intp* s, intp n) noexcept nogil:
    if n > 1:
        introsort(Xf, s, n, 2 * <int>log(<double>n))


# --- impurity helpers: operation order must match splits._class_impurity_rows

cdef inline double class_impurity(const double* cnt, int k, double w, int crit) noexcept nogil:
    cdef double s = 0.0, p
    cdef int c
    if crit == 0:
        for c in range(k):
            p = cnt[c] / w
            s = s + p * p
        return 1.0 - s
    for c in range(k):
        if cnt[c] > 0:
            p = cnt[c] / w
            s = s - p * log2(p)
    return s


cdef inline double variance(double s, double sq, double w) noexcept nogil:
    cdef double m = s / w
    cdef double q = sq / w - m * m
    return q if q > 0.0 else 0.0


cdef class _Builder:
    cdef const float[:, ::1] X
    cdef const double[::1] y
    cdef const double[::1] w
    cdef int k, crit, max_features, max_depth, purity_stop, right_first
    cdef double min_split, min_leaf, lam
    cdef uint64_t rng_state

    def __init__(self, X, y, w, int k, int crit, int max_features, double min_split,
                 double min_leaf, int max_depth, double lam, bint purity_stop,
                 bint right_first, uint64_t seed):
        self.X = X
        self.y = y
        self.w = w
        self.k = k
        self.crit = crit
        self.max_features = max_features
        self.min_split = min_split
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.lam = lam
        self.purity_stop = purity_stop
        self.right_first = right_first
        self.rng_state = seed

    def run(self):
        cdef intp n = self.X.shape[0]
        cdef int d = self.X.shape[1]
        cdef int kv = 2 if self.crit == 2 else self.k
        cdef cnp.ndarray[intp, ndim=1] samples_arr = np.flatnonzero(np.asarray(self.w) > 0).astype(np.intp)
        cdef intp n_pos = samples_arr.shape[0]
        cdef intp cap = max(1, 2 * n_pos - 1)
        feature_a = np.full(cap, -1, dtype=np.int32)
        threshold_a = np.zeros(cap, dtype=np.float32)
        left_a = np.zeros(cap, dtype=np.int32)
        right_a = np.zeros(cap, dtype=np.int32)
        value_a = np.zeros((cap, kv), dtype=np.float64)
        bucket_a = np.full(cap, -1, dtype=np.int64)
        row_leaf_a = np.full(n, -1, dtype=np.int64)
        cdef int32_t[::1] feature = feature_a
        cdef float[::1] threshold = threshold_a
        cdef int32_t[::1] left = left_a
        cdef int32_t[::1] right = right_a
        cdef double[:, ::1] value = value_a
        cdef int64_t[::1] bucket = bucket_a
        cdef int64_t[::1] row_leaf = row_leaf_a
        cdef intp* samples = <intp*> cnp.PyArray_DATA(samples_arr)
        cdef intp node_count = 0, leaf_count = 0
        cdef int max_seen = 0
        cdef int ok
        with nogil:
            ok = self._grow(samples, n_pos, d, feature, threshold, left, right, value,
                            bucket, row_leaf, &node_count, &leaf_count, &max_seen)
        if ok != 0:
            raise MemoryError()
        m = node_count
        return {
            "feature": feature_a[:m].copy(),
            "threshold": threshold_a[:m].copy(),
            "left": left_a[:m].copy(),
            "right": right_a[:m].copy(),
            "value": value_a[:m].copy(),
            "bucket": bucket_a[:m].copy(),
            "row_leaf": row_leaf_a,
            "n_leaves": leaf_count,
            "depth": max_seen,
        }

    cdef int _grow(self, intp* samples, intp n_pos, int d, int32_t[::1] feature,
                   float[::1] threshold, int32_t[::1] left, int32_t[::1] right,
                   double[:, ::1] value, int64_t[::1] bucket, int64_t[::1] row_leaf,
                   intp* node_count_out, intp* leaf_count_out, int* max_seen_out) noexcept nogil:
        cdef int k = self.k
        cdef bint regression = self.crit == 2
        cdef intp stack_cap = 64, top = 0
        cdef Record* stack = <Record*> malloc(stack_cap * sizeof(Record))
        cdef uint8_t* masks = <uint8_t*> malloc(stack_cap * d)
        cdef uint8_t* known = <uint8_t*> malloc(d)
        cdef float* Xf = <float*> malloc((n_pos + 1) * sizeof(float))
        cdef int* feats = <int*> malloc(d * sizeof(int))
        cdef double* total = <double*> malloc((k + 1) * sizeof(double))
        cdef double* cntl = <double*> malloc((k + 1) * sizeof(double))
        cdef double* cntr = <double*> malloc((k + 1) * sizeof(double))
        cdef Record rec
        cdef Record* tmp_stack
        cdef uint8_t* tmp_masks
        cdef intp node, node_count = 0, leaf_count = 0, p, q, i, j, start, end, nl
        cdef int depth, f, found, c, best_f, max_seen = 0
        cdef double W, S, SQ, wi, yv, q_parent, wl, wr, sl, sql, ql, qr, g
        cdef double best_g, feat_g, lam = self.lam
        cdef float best_t, thr, lo, hi
        cdef intp feat_p
        cdef bint pure, is_leaf, have_best
        cdef double ymin, ymax

        if stack == NULL or masks == NULL or known == NULL or Xf == NULL or feats == NULL \
                or total == NULL or cntl == NULL or cntr == NULL:
            free(stack); free(masks); free(known); free(Xf); free(feats)
            free(total); free(cntl); free(cntr)
            return -1

        stack[0].start = 0
        stack[0].end = n_pos
        stack[0].depth = 0
        stack[0].parent = -1
        stack[0].is_left = 0
        memset(masks, 0, d)
        top = 1

        while top > 0:
            top -= 1
            rec = stack[top]
            memcpy(known, masks + top * d, d)
            start = rec.start
            end = rec.end
            depth = rec.depth
            node = node_count
            node_count += 1
            if rec.parent >= 0:
                if rec.is_left:
                    left[rec.parent] = <int32_t> node
                else:
                    right[rec.parent] = <int32_t> node
            if depth > max_seen:
                max_seen = depth

            # node statistics
            W = 0.0
            if regression:
                S = 0.0
                SQ = 0.0
                ymin = self.y[samples[start]]
                ymax = ymin
                for p in range(start, end):
                    i = samples[p]
                    wi = self.w[i]
                    yv = self.y[i]
                    W += wi
                    S += wi * yv
                    SQ += wi * yv * yv
                    if yv < ymin:
                        ymin = yv
                    if yv > ymax:
                        ymax = yv
                value[node, 0] = S / W
                value[node, 1] = W
                pure = ymin == ymax
                q_parent = variance(S, SQ, W)
            else:
                for c in range(k):
                    total[c] = 0.0
                for p in range(start, end):
                    i = samples[p]
                    total[<int> self.y[i]] += self.w[i]
                found = 0
                for c in range(k):
                    W += total[c]
                    value[node, c] = total[c]
                    if total[c] > 0:
                        found += 1
                pure = found <= 1
                q_parent = class_impurity(total, k, W, self.crit)

            is_leaf = (W < self.min_split
                       or (self.max_depth >= 0 and depth >= self.max_depth)
                       or (self.purity_stop and pure))

            have_best = False
            best_f = -1
            best_t = 0.0
            best_g = 0.0
            if not is_leaf:
                for i in range(d):
                    feats[i] = <int> i
                found = 0
                i = 0
                while i < d and found < self.max_features:
                    if self.max_features < d:
                        j = i + <intp> (rng_next(&self.rng_state) % <uint64_t> (d - i))
                        feats[i], feats[j] = feats[j], feats[i]
                    f = feats[i]
                    i += 1
                    if known[f]:
                        continue
                    for p in range(start, end):
                        Xf[p - start] = self.X[samples[p], f]
                    sort_pairs(Xf, samples + start, end - start)
                    if Xf[end - start - 1] <= Xf[0]:
                        known[f] = 1
                        continue
                    found += 1

                    # scan thresholds
                    wl = 0.0
                    sl = 0.0
                    sql = 0.0
                    if not regression:
                        for c in range(k):
                            cntl[c] = 0.0
                    feat_p = -1
                    feat_g = 0.0
                    for p in range(start, end - 1):
                        q = samples[p]
                        wi = self.w[q]
                        wl += wi
                        if regression:
                            yv = self.y[q]
                            sl += wi * yv
                            sql += wi * yv * yv
                        else:
                            cntl[<int> self.y[q]] += wi
                        if not (Xf[p - start] < Xf[p - start + 1]):
                            continue
                        wr = W - wl
                        if wl < self.min_leaf or wr < self.min_leaf:
                            continue
                        if regression:
                            ql = variance(sl, sql, wl)
                            qr = variance(S - sl, SQ - sql, wr)
                        else:
                            ql = class_impurity(cntl, k, wl, self.crit)
                            for c in range(k):
                                cntr[c] = total[c] - cntl[c]
                            qr = class_impurity(cntr, k, wr, self.crit)
                        g = q_parent - (wl / W) * ql - (wr / W) * qr
                        g = (1.0 - lam) * g - lam * fabs(wl - wr) / W
                        if feat_p < 0 or g > feat_g:
                            feat_g = g
                            feat_p = p - start
                    if feat_p < 0:
                        continue
                    lo = Xf[feat_p]
                    hi = Xf[feat_p + 1]
                    thr = <float> ((<double> lo + <double> hi) * 0.5)
                    if thr >= hi:
                        thr = lo
                    if (not have_best or feat_g > best_g
                            or (feat_g == best_g and (f < best_f or (f == best_f and thr < best_t)))):
                        have_best = True
                        best_g = feat_g
                        best_f = f
                        best_t = thr

            if not have_best:
                bucket[node] = leaf_count
                for p in range(start, end):
                    row_leaf[samples[p]] = leaf_count
                leaf_count += 1
                continue

            feature[node] = best_f
            threshold[node] = best_t
            # partition samples[start:end] on x[best_f] <= best_t
            p = start
            q = end
            while p < q:
                if self.X[samples[p], best_f] <= best_t:
                    p += 1
                else:
                    q -= 1
                    samples[p], samples[q] = samples[q], samples[p]
            nl = p

            if top + 2 > stack_cap:
                stack_cap *= 2
                tmp_stack = <Record*> realloc(stack, stack_cap * sizeof(Record))
                tmp_masks = <uint8_t*> realloc(masks, stack_cap * d)
                if tmp_stack == NULL or tmp_masks == NULL:
                    free(tmp_stack if tmp_stack != NULL else stack)
                    free(tmp_masks if tmp_masks != NULL else masks)
                    free(known); free(Xf); free(feats); free(total); free(cntl); free(cntr)
                    return -1
                stack = tmp_stack
                masks = tmp_masks
            if self.right_first:
                self._push(stack, masks, known, d, top, start, nl, depth + 1, node, 1)
                self._push(stack, masks, known, d, top + 1, nl, end, depth + 1, node, 0)
            else:
                self._push(stack, masks, known, d, top, nl, end, depth + 1, node, 0)
                self._push(stack, masks, known, d, top + 1, start, nl, depth + 1, node, 1)
            top += 2

        free(stack); free(masks); free(known); free(Xf); free(feats)
        free(total); free(cntl); free(cntr)
        node_count_out[0] = node_count
        leaf_count_out[0] = leaf_count
        max_seen_out[0] = max_seen
        return 0

    cdef inline void _push(self, Record* stack, uint8_t* masks, uint8_t* known, int d,
                           intp slot, intp start, intp end, int depth, intp parent,
                           int is_left) noexcept nogil:
        stack[slot].start = start
        stack[slot].end = end
        stack[slot].depth = depth
        stack[slot].parent = parent
        stack[slot].is_left = is_left
        memcpy(masks + slot * d, known, d)


def build(X, y, w, n_classes, criterion, max_features, min_split, min_leaf, max_depth,
          lam, purity_stop, right_first, seed):
    return _Builder(X, y, w, n_classes, criterion, max_features, min_split, min_leaf,
                    max_depth, lam, purity_stop, right_first, seed).run()


def apply(const int32_t[::1] feature, const float[::1] threshold, const int32_t[::1] left,
          const int32_t[::1] right, const float[:, ::1] X):
    """Node index of the leaf reached by every row of X."""
    cdef intp n = X.shape[0], r
    cdef int32_t node
    out_a = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] out = out_a
    with nogil:
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] = node
    return out_a
