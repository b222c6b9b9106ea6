"""Synthetic classification datasets for offline experiments.

* ``rare-class``: two overlapping majority classes plus one tight, well
  separated rare cluster (class 2) holding ``rare_fraction`` of the mass.
* ``skewed``: one dominant class (99% by default) on heavy-tailed features;
  the minority class occupies a corner of feature space.
* ``gaussian-mixture``: k classes, each a mixture of Gaussian components
  with unequal priors (a stand-in for covtype-like tabular data).

The distribution itself is fixed by ``structure_seed``; ``seed`` only drives
the sampling, so train and test sets drawn with different seeds share one
distribution.  Rows are produced in fixed blocks, which keeps the output
independent of any chunking used by the caller.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetWriter
from .errors import ConfigError

GENERATORS = ("rare-class", "skewed", "gaussian-mixture")
RARE_CLASS = 2
_BLOCK = 100_000


def _rare_block(rng, m, d, rare_fraction, params):
    rare = rng.random(m) < rare_fraction
    X = rng.normal(size=(m, d))
    y = (X[:, 0] + 0.5 * X[:, 1] + 0.6 * rng.normal(size=m) > 0).astype(np.int64)
    nr = int(rare.sum())
    X[rare] = params["rare_center"] + 0.25 * rng.normal(size=(nr, d))
    y[rare] = RARE_CLASS
    return X, y


def _skewed_block(rng, m, d, dominant, params):
    X = rng.lognormal(mean=0.0, sigma=1.0, size=(m, d))
    minority = rng.random(m) >= dominant
    nm = int(minority.sum())
    X[minority] = params["corner"] + rng.exponential(0.3, size=(nm, d))
    return X, minority.astype(np.int64)


def _mixture_block(rng, m, d, params):
    comp = rng.choice(len(params["weights"]), size=m, p=params["weights"])
    X = params["means"][comp] + rng.normal(size=(m, d)) * params["scales"][comp][:, None]
    return X, params["labels"][comp].astype(np.int64)


def _structure(kind, d, k, structure_seed):
    rng = np.random.default_rng(structure_seed)
    if kind == "rare-class":
        return {"rare_center": np.full(d, 3.5)}
    if kind == "skewed":
        return {"corner": np.full(d, 6.0)}
    comps_per_class = 3
    labels = np.repeat(np.arange(k), comps_per_class)
    prior = rng.dirichlet(np.full(k, 2.0))
    weights = np.repeat(prior / comps_per_class, comps_per_class)
    weights = weights * rng.uniform(0.5, 1.5, size=weights.size)
    return {
        "labels": labels,
        "weights": weights / weights.sum(),
        "means": rng.normal(scale=1.6, size=(labels.size, d)),
        "scales": rng.uniform(0.6, 1.2, size=labels.size),
    }


def _defaults(kind, d, k):
    if kind not in GENERATORS:
        raise ConfigError(f"unknown generator {kind!r}; choose from {GENERATORS}")
    if d is None:
        d = {"rare-class": 4, "skewed": 2, "gaussian-mixture": 10}[kind]
    if k is None:
        k = {"rare-class": 3, "skewed": 2, "gaussian-mixture": 7}[kind]
    if d < 1 or (kind == "gaussian-mixture" and k < 2):
        raise ConfigError("generator needs d >= 1 and k >= 2")
    return d, k


def iter_generated(kind, n, seed=0, d=None, k=None, structure_seed=2024,
                   rare_fraction=0.005, dominant=0.99):
    """Yield (X, y) blocks of at most 100k rows totalling ``n`` rows."""
    d, k = _defaults(kind, d, k)
    if n < 1:
        raise ConfigError("n must be >= 1")
    params = _structure(kind, d, k, structure_seed)
    for b, start in enumerate(range(0, n, _BLOCK)):
        m = min(_BLOCK, n - start)
        rng = np.random.default_rng([seed, b])
        if kind == "rare-class":
            X, y = _rare_block(rng, m, d, rare_fraction, params)
        elif kind == "skewed":
            X, y = _skewed_block(rng, m, d, dominant, params)
        else:
            X, y = _mixture_block(rng, m, d, params)
        yield X.astype(np.float32), y


def generate(kind, n, seed=0, **kw):
    """Return ``(X, y)`` with ``n`` rows drawn from generator ``kind``."""
    parts = list(iter_generated(kind, n, seed, **kw))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def n_classes_of(kind, k=None) -> int:
    return _defaults(kind, None, k)[1]


def write_generated(path, kind, n, seed=0, **kw):
    """Stream a generated dataset into the binary format; returns the handle."""
    k = n_classes_of(kind, kw.get("k"))
    writer = None
    for X, y in iter_generated(kind, n, seed, **kw):
        if writer is None:
            writer = DatasetWriter(path, X.shape[1], "classification", k)
        writer.append(X, y)
    return writer.close()
