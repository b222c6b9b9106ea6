import numpy as np
import pytest

from canopy._rng import SplitMix64
from canopy.data import DatasetHandle, MemoryStore, ResidentCounter
from canopy.errors import ConfigError, DomainError, FormatError
from canopy.forest import (ForestConfig, ForestModel, TopUnit, build_big_forest,
                           build_standard_forest, build_subsets_forest,
                           default_subset_and_leaf_size, distribute, forest_from_bytes,
                           forest_to_bytes, grow_bottom_trees, load_forest, poisson_weights,
                           predict_forest, save_forest, vote_argmax, _splitmix_at)
from canopy.splits import GainConfig
from canopy.synthetic import RARE_CLASS, generate
from canopy.tree import BuildParams, build_top_tree, build_tree, leaf_tree


def handle_of(kind="gaussian-mixture", n=3000, seed=0, **kw):
    X, y = generate(kind, n, seed=seed, **kw)
    k = int(y.max()) + 1 if kind != "rare-class" else 3
    return DatasetHandle.from_arrays(X, y, n_classes=k, chunk_size=700), X, y


def small_config(**kw):
    base = dict(n_top=2, n_b=2, R=800, M=300, chunk_size=700, seed=5, jobs=2)
    base.update(kw)
    return ForestConfig(**base)


def trivial_unit(trees):
    top = leaf_tree(np.zeros(trees[0].n_classes) if trees[0].n_classes else 0.0, 1,
                    trees[0].n_classes)
    top.mode = "top"
    return TopUnit(top, [trees])


class TestDefaults:
    @pytest.mark.parametrize("n,expected", [(464_809, 100_000), (10**8, 500_000),
                                            (50_000, 50_000), (10**6, 100_000),
                                            (4 * 10**6, 200_000)])
    def test_formula(self, n, expected):
        assert default_subset_and_leaf_size(n) == (expected, expected)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            default_subset_and_leaf_size(0)

    @pytest.mark.parametrize("kw", [dict(n_top=0), dict(n_b=0), dict(lam=1.5), dict(M=1),
                                    dict(store="tape"), dict(jobs=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            ForestConfig(**kw).validate(100)

    def test_r_above_n(self):
        with pytest.raises(ConfigError):
            ForestConfig(R=101).validate(100)

    def test_total_trees(self):
        assert ForestConfig(n_top=6, n_b=4).total_trees == 24


class TestPoissonWeights:
    def test_stream_matches_splitmix(self):
        r = SplitMix64(1234)
        want = [r.next() for _ in range(10)]
        got = _splitmix_at(1234, np.arange(10)).tolist()
        assert got == want

    def test_chunk_independent(self):
        a = poisson_weights(7, 0, 100, 3)
        b = np.concatenate([poisson_weights(7, 0, 33, 3), poisson_weights(7, 33, 67, 3)])
        assert np.array_equal(a, b)

    def test_moments(self):
        w = poisson_weights(1, 0, 200_000, 1)[:, 0].astype(float)
        assert abs(w.mean() - 1) < 0.01 and abs(w.var() - 1) < 0.02
        assert abs(np.mean(w == 0) - np.exp(-1)) < 0.005


class TestDistribute:
    def test_single_leaf_top(self):
        h, X, y = handle_of(n=1000)
        top = build_top_tree(X[:10], y[:10], 50.0, n_classes=7)
        store = MemoryStore()
        man = distribute([top], h, store, 2)
        assert len(man.entries) == 1 and man.entries[0].n_rows == 1000
        Xb, yb, Wb = store.read_bucket((0, 0))
        assert np.array_equal(Xb, X) and Wb.shape == (1000, 2)

    def test_partition_and_routing_audit(self):
        h, X, y = handle_of(n=4000)
        tops = [build_top_tree(X[i::3], y[i::3], 40.0, n_classes=7) for i in range(3)]
        store = MemoryStore()
        man = distribute(tops, h, store, 3, seed=2)
        assert man.rows_per_top() == {0: 4000, 1: 4000, 2: 4000}
        for t, top in enumerate(tops):
            seen = []
            for e in man.for_top(t):
                Xb, yb, Wb = store.read_bucket(e.bucket_id)
                assert len(yb) == e.n_rows
                assert np.all(top.predict_leaf_index(Xb) == e.leaf)
                seen.append(Xb)
            # every row exactly once: compare sorted row multisets
            rows = np.concatenate(seen)
            assert np.array_equal(rows[np.lexsort(rows.T)], X[np.lexsort(X.T)])

    def test_bootstrap_weights_within_4_sigma(self):
        h, X, y = handle_of(n=6000)
        top = build_top_tree(X[:1500], y[:1500], 60.0, n_classes=7)
        store = MemoryStore()
        man = distribute([top], h, store, 4, seed=8)
        for e in man.entries:
            _, _, W = store.read_bucket(e.bucket_id)
            if e.n_rows == 0:
                continue
            dev = np.abs(W.sum(axis=0).astype(float) - e.n_rows)
            assert np.all(dev <= 4 * np.sqrt(e.n_rows))

    def test_no_bootstrap(self):
        h, X, y = handle_of(n=500)
        store = MemoryStore()
        distribute([build_top_tree(X, y, 600.0)], h, store, 2, bootstrap=False)
        assert np.all(store.read_bucket((0, 0))[2] == 1)


class TestBigForest:
    def test_degenerate_matches_single_tree(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 3)).astype(np.float32)
        y = rng.integers(0, 3, 300)
        h = DatasetHandle.from_arrays(X, y)
        model = build_big_forest(h, ForestConfig(n_top=1, n_b=1, R=300, lam=0.0, M=2, seed=1))
        direct = build_tree(X, y, n_classes=3)
        assert np.array_equal(model.predict(X), direct.predict(X))

    def test_tree_counts(self):
        h, X, y = handle_of(n=2000)
        m = build_big_forest(h, small_config(n_top=6, n_b=4, R=500))
        assert m.n_trees == 24 and len(m.units) == 6
        for u in m.units:
            assert len(u.bottoms) == u.top.n_leaves
            assert all(len(b) == 4 for b in u.bottoms)

    def test_rare_class_still_predicted(self):
        X, y = generate("rare-class", 20_000, seed=2)
        h = DatasetHandle.from_arrays(X, y, n_classes=3)
        # subsets far too small to contain the rare cluster
        m = build_big_forest(h, ForestConfig(n_top=2, n_b=2, R=50, M=2000, seed=3))
        Xt, yt = generate("rare-class", 20_000, seed=9)
        rare = yt == RARE_CLASS
        assert np.mean(m.predict(Xt[rare]) == RARE_CLASS) > 0.9

    def test_accuracy_reasonable(self):
        h, X, y = handle_of(n=6000)
        Xt, yt = generate("gaussian-mixture", 3000, seed=77)
        m = build_big_forest(h, small_config(R=3000, M=1500))
        s = build_standard_forest(h, small_config())
        assert abs(np.mean(m.predict(Xt) == yt) - np.mean(s.predict(Xt) == yt)) < 0.04

    def test_memory_and_disk_identical(self, tmp_path):
        h, _, _ = handle_of(n=3000)
        a = build_big_forest(h, small_config(store="memory"))
        b = build_big_forest(h, small_config(store="disk", scratch_dir=str(tmp_path)))
        assert forest_to_bytes(a) == forest_to_bytes(b)
        assert not any((tmp_path / "run").glob("**/*.bin"))

    def test_chunk_size_and_jobs_do_not_matter(self):
        h, _, _ = handle_of(n=3000)
        a = build_big_forest(h, small_config(chunk_size=700, jobs=1))
        b = build_big_forest(h, small_config(chunk_size=1234, jobs=3))
        assert forest_to_bytes(a) == forest_to_bytes(b)

    def test_seed_changes_model(self):
        h, _, _ = handle_of(n=3000)
        assert forest_to_bytes(build_big_forest(h, small_config(seed=1))) != \
            forest_to_bytes(build_big_forest(h, small_config(seed=2)))

    def test_resident_counter_bounds(self):
        h, _, _ = handle_of(n=5000)
        cfg = small_config()
        c = ResidentCounter()
        m = build_big_forest(h, cfg, c)
        rep = m.report
        assert rep.phase_peaks["sample_top"] <= cfg.n_top * cfg.R + cfg.chunk_size
        assert rep.phase_peaks["distribute"] <= cfg.n_top * cfg.R + 2 * cfg.chunk_size
        assert rep.phase_peaks["bottom"] <= rep.manifest.max_rows + cfg.chunk_size
        assert c.current == 0

    def test_oversized_buckets_resplit(self):
        h, X, y = handle_of(n=6000)
        store = MemoryStore()
        cfg = small_config(n_top=1, n_b=1, R=60, M=100, hard_cap_multiplier=1.5)
        m = build_big_forest(h, cfg, store=store)
        top = m.units[0].top
        man = m.report.manifest
        assert sorted(e.leaf for e in man.entries) == list(range(top.n_leaves))
        assert sum(e.n_rows for e in man.entries) == 6000
        assert man.max_rows <= 150
        for e in man.entries:
            Xb, _, _ = store.read_bucket(e.bucket_id)
            assert np.all(top.predict_leaf_index(Xb) == e.leaf)
        assert forest_from_bytes(forest_to_bytes(m)).units[0].top.n_leaves == top.n_leaves

    def test_empty_bucket_fallback(self):
        X = np.linspace(0, 100, 400, dtype=np.float32)[:, None]
        y = (X[:, 0] > 50).astype(int)
        top = build_top_tree(X, y, 20.0, n_classes=2)
        h = DatasetHandle.from_arrays(X[:100], y[:100], n_classes=2)
        store = MemoryStore()
        man = distribute([top], h, store, 1)
        assert any(e.n_rows == 0 for e in man.entries)
        units = grow_bottom_trees([top], man, store, h, ForestConfig(n_b=1))
        model = ForestModel(units, "classification", 1, 2)
        assert model.predict([[99.0]])[0] == 1
        assert model.predict([[1.0]])[0] == 0

    def test_regression_forest(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-2, 2, size=(3000, 2)).astype(np.float32)
        y = np.sin(X[:, 0]) + 0.1 * X[:, 1]
        h = DatasetHandle.from_arrays(X, y, task="regression")
        cfg = small_config(bottom_params=BuildParams(gain=GainConfig(measure="variance")))
        m = build_big_forest(h, cfg)
        assert m.task == "regression"
        assert np.mean((m.predict(X) - y) ** 2) < 0.01
        m2 = forest_from_bytes(forest_to_bytes(m))
        assert np.array_equal(m2.predict(X), m.predict(X))


class TestBaselines:
    def test_subsets_row_counts(self):
        h, _, _ = handle_of(n=2000)
        m = build_subsets_forest(h, small_config(subset_size=300))
        assert m.meta["subset_rows"] == [300] * 4 and m.n_trees == 4

    def test_subsets_clamp(self):
        h, X, y = handle_of(n=500)
        m = build_subsets_forest(h, small_config(subset_size=10_000, bootstrap=False))
        assert m.meta["subset_rows"] == [500] * 4
        assert np.array_equal(m.predict(X), y)

    def test_standard(self):
        h, X, y = handle_of(n=1000)
        m = build_standard_forest(h, small_config())
        assert m.n_trees == 4 and m.scheme == "standard"
        assert np.mean(m.predict(X) == y) > 0.95


class TestCombiner:
    def test_vote_argmax(self):
        assert vote_argmax([0, 5, 0]) == 1
        assert vote_argmax([3, 3]) == 0
        assert vote_argmax([1, 2, 2]) == 1
        assert vote_argmax(np.array([[0, 1], [2, 1]])).tolist() == [1, 0]

    def test_no_votes(self):
        with pytest.raises(DomainError):
            vote_argmax([0, 0])

    def test_unanimous(self):
        h = [0, 0, 0, 1]
        trees = [leaf_tree(h, 1, 4) for _ in range(3)]
        m = ForestModel([trivial_unit(trees)], "classification", 1, 4)
        assert predict_forest(m, [[0.0], [5.0]]).tolist() == [3, 3]

    def test_majority(self):
        trees = [leaf_tree([0, 1], 1, 2), leaf_tree([1, 0], 1, 2), leaf_tree([0, 1], 1, 2)]
        m = ForestModel([trivial_unit(trees)], "classification", 1, 2)
        assert predict_forest(m, [[0.0]]).tolist() == [1]

    def test_regression_mean(self):
        trees = [leaf_tree(v, 1, 0) for v in (1.0, 2.0, 3.0)]
        m = ForestModel([trivial_unit(trees)], "regression", 1, 0)
        assert predict_forest(m, [[0.0]]).tolist() == [2.0]

    def test_arity(self):
        m = ForestModel([trivial_unit([leaf_tree([1, 0], 2, 2)])], "classification", 2, 2)
        with pytest.raises(DomainError):
            m.predict(np.zeros((1, 3)))


class TestContainer:
    def test_round_trip(self, tmp_path):
        h, X, _ = handle_of(n=2000)
        m = build_big_forest(h, small_config())
        save_forest(m, tmp_path / "m.zip")
        m2 = load_forest(tmp_path / "m.zip")
        assert np.array_equal(m.predict(X), m2.predict(X))
        assert forest_to_bytes(m2) == forest_to_bytes(m)
        assert m2.meta["config"]["n_b"] == "2"

    def test_manifest_text(self):
        import io
        import zipfile
        h, _, _ = handle_of(n=1000)
        blob = forest_to_bytes(build_big_forest(h, small_config()))
        man = zipfile.ZipFile(io.BytesIO(blob)).read("manifest.txt").decode()
        for key in ("version = 1", "task = classification", "n_features = 10",
                    "n_classes = 7", "config.lambda = 1.0", "unit.1.n_b = 2"):
            assert key in man

    def test_garbage(self):
        with pytest.raises(FormatError):
            forest_from_bytes(b"not a zip")

    def test_wrong_version(self):
        import io
        import zipfile
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            zf.writestr("manifest.txt", "format = canopy-forest\nversion = 9\n")
        with pytest.raises(FormatError):
            forest_from_bytes(buf.getvalue())
