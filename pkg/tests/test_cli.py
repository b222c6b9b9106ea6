import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from canopy.cli import BENCH_COLUMNS, main, resolve_tree_counts
from canopy.data import open_dataset, write_dataset
from canopy.errors import ConfigError
from canopy.synthetic import generate


@pytest.fixture
def datasets(tmp_path):
    X, y = generate("gaussian-mixture", 3000, seed=1)
    Xt, yt = generate("gaussian-mixture", 1000, seed=2)
    write_dataset(tmp_path / "train.cnpy", X, y, n_classes=7)
    write_dataset(tmp_path / "test.cnpy", Xt, yt, n_classes=7)
    return tmp_path / "train.cnpy", tmp_path / "test.cnpy"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


SMALL = ["--trees", "4", "--subset-size", "600", "--leaf-bucket-size", "300", "--jobs", "2"]


class TestIngest:
    def test_hundred_rows(self, tmp_path, capsys):
        src = tmp_path / "d.csv"
        src.write_text("f1,f2,label\n" + "".join(f"{i},{i % 7},{i % 2}\n" for i in range(100)))
        code, out, _ = run(["ingest", src, "--output", tmp_path / "d.cnpy"], capsys)
        assert code == 0 and "n_rows=100" in out and "d=2" in out and "k=2" in out
        assert open_dataset(tmp_path / "d.cnpy").n_rows == 100

    def test_bad_cell(self, tmp_path, capsys):
        src = tmp_path / "d.csv"
        src.write_text("1,2,0\n1,2,0\nx,2,1\n")
        code, _, err = run(["ingest", src, "--output", tmp_path / "d.cnpy"], capsys)
        assert code == 1 and "row 3" in err

    def test_reingest_identical(self, tmp_path, capsys):
        src = tmp_path / "d.csv"
        src.write_text("".join(f"{i * 0.25},{i % 3}\n" for i in range(50)))
        run(["ingest", src, "--output", tmp_path / "a.cnpy"], capsys)
        run(["ingest", src, "--output", tmp_path / "b.cnpy"], capsys)
        assert (tmp_path / "a.cnpy").read_bytes() == (tmp_path / "b.cnpy").read_bytes()

    def test_missing_file(self, tmp_path, capsys):
        code, _, _ = run(["ingest", tmp_path / "nope.csv", "--output", tmp_path / "x"], capsys)
        assert code == 1


class TestTreeCounts:
    def test_paper_layout(self):
        assert resolve_tree_counts(24, 6, None) == (6, 4)

    def test_defaults(self):
        assert resolve_tree_counts(None, None, None) == (6, 4)
        assert resolve_tree_counts(7, None, None) == (1, 7)
        assert resolve_tree_counts(12, None, 12) == (1, 12)

    def test_inconsistent(self):
        with pytest.raises(ConfigError):
            resolve_tree_counts(10, 3, None)
        with pytest.raises(ConfigError):
            resolve_tree_counts(10, 3, 4)

    def test_baselines_one_tree_per_unit(self):
        assert resolve_tree_counts(24, 6, None, "subsets") == (24, 1)
        assert resolve_tree_counts(None, None, None, "standard") == (24, 1)


class TestTrain:
    def test_report_and_model(self, tmp_path, datasets, capsys):
        train, test = datasets
        code, out, _ = run(["train", train, "--output", tmp_path / "m.zip", "--test", test,
                            "--trees", "24", "--top-trees", "6", "--subset-size", "600",
                            "--leaf-bucket-size", "300"], capsys)
        assert code == 0
        rep = json.loads(out.strip().splitlines()[-1])
        assert (rep["n_top"], rep["n_b"], rep["total_trees"]) == (6, 4, 24)
        assert rep["metric"] == "accuracy" and 0 <= rep["value"] <= 1
        assert set(rep["phase_seconds"]) == {"sample_top", "distribute", "bottom"}
        assert sum(rep["phase_seconds"].values()) <= rep["total_seconds"]
        assert rep["n_train"] == 3000 and rep["seed"] == 0

    def test_lambda_out_of_range(self, tmp_path, datasets, capsys):
        code, _, err = run(["train", datasets[0], "--output", tmp_path / "m", "--lambda", "1.5"],
                           capsys)
        assert code == 2 and "lambda" in err
        assert not (tmp_path / "m").exists()

    def test_subset_larger_than_data(self, tmp_path, datasets, capsys):
        code, _, _ = run(["train", datasets[0], "--output", tmp_path / "m",
                          "--subset-size", "5000"], capsys)
        assert code == 2

    def test_deterministic(self, tmp_path, datasets, capsys):
        for name in ("a.zip", "b.zip"):
            assert run(["train", datasets[0], "--output", tmp_path / name, *SMALL,
                        "--seed", "3"], capsys)[0] == 0
        assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()

    def test_disk_store_matches_memory(self, tmp_path, datasets, capsys, monkeypatch):
        monkeypatch.setenv("CANOPY_SCRATCH", str(tmp_path / "scratch"))
        run(["train", datasets[0], "--output", tmp_path / "a.zip", *SMALL], capsys)
        run(["train", datasets[0], "--output", tmp_path / "b.zip", *SMALL, "--store", "disk"],
            capsys)
        assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()

    def test_disk_store_needs_scratch(self, tmp_path, datasets, capsys, monkeypatch):
        monkeypatch.delenv("CANOPY_SCRATCH", raising=False)
        code, _, _ = run(["train", datasets[0], "--output", tmp_path / "m", "--store", "disk"],
                         capsys)
        assert code == 2

    def test_unwritable_scratch_is_storage_error(self, tmp_path, datasets, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        code, _, _ = run(["train", datasets[0], "--output", tmp_path / "m", *SMALL,
                          "--store", "disk", "--scratch-dir", blocker], capsys)
        assert code == 3

    def test_csv_input_and_schemes(self, tmp_path, capsys):
        src = tmp_path / "d.csv"
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(300, 3))
        src.write_text("".join(f"{a},{b},{c},{int(a > 0)}\n" for a, b, c in rows))
        for scheme in ("woody", "subsets", "standard"):
            code, out, _ = run(["train", src, "--output", tmp_path / f"{scheme}.zip",
                                "--scheme", scheme, "--trees", "2", "--subset-size", "100",
                                "--leaf-bucket-size", "50"], capsys)
            assert code == 0
            assert json.loads(out)["scheme"] == scheme

    def test_standard_rejects_disk(self, tmp_path, datasets, capsys):
        code, _, _ = run(["train", datasets[0], "--output", tmp_path / "m", "--scheme",
                          "standard", "--store", "disk", "--scratch-dir", tmp_path], capsys)
        assert code == 2

    def test_report_file(self, tmp_path, datasets, capsys):
        rep = tmp_path / "r.jsonl"
        for _ in range(2):
            run(["train", datasets[0], "--output", tmp_path / "m", *SMALL, "--report", rep],
                capsys)
        assert len(rep.read_text().splitlines()) == 2


class TestPredictEvaluate:
    def test_pure_class_constant(self, tmp_path, datasets, capsys):
        X, _ = generate("gaussian-mixture", 500, seed=4)
        write_dataset(tmp_path / "pure.cnpy", X, np.full(500, 2), n_classes=3)
        run(["train", tmp_path / "pure.cnpy", "--output", tmp_path / "m", "--trees", "2",
             "--subset-size", "200", "--leaf-bucket-size", "100"], capsys)
        Xt, _ = generate("gaussian-mixture", 200, seed=5)
        write_dataset(tmp_path / "t.cnpy", Xt, np.zeros(200, int), n_classes=3)
        assert run(["predict", tmp_path / "m", tmp_path / "t.cnpy", "--output",
                    tmp_path / "p.txt"], capsys)[0] == 0
        assert set((tmp_path / "p.txt").read_text().split()) == {"2"}

    def test_memorisation(self, tmp_path, datasets, capsys):
        run(["train", datasets[0], "--output", tmp_path / "m", "--scheme", "standard",
             "--trees", "1", "--max-features", "all", "--no-bootstrap"], capsys)
        code, out, _ = run(["evaluate", tmp_path / "m", datasets[0]], capsys)
        assert code == 0 and out.strip() == "accuracy: 1.000000"

    def test_evaluate_matches_predictions(self, tmp_path, datasets, capsys):
        train, test = datasets
        run(["train", train, "--output", tmp_path / "m", *SMALL], capsys)
        _, out, _ = run(["evaluate", tmp_path / "m", test, "--output", tmp_path / "e.txt"],
                        capsys)
        run(["predict", tmp_path / "m", test, "--output", tmp_path / "p.txt"], capsys)
        pred = np.loadtxt(tmp_path / "p.txt", dtype=int)
        _, y = open_dataset(test).read_all()
        assert out.strip() == f"accuracy: {np.mean(pred == y):.6f}"
        assert (tmp_path / "e.txt").read_text() == (tmp_path / "p.txt").read_text()

    def test_feature_mismatch(self, tmp_path, datasets, capsys):
        run(["train", datasets[0], "--output", tmp_path / "m", *SMALL], capsys)
        write_dataset(tmp_path / "narrow.cnpy", np.zeros((5, 3)), np.zeros(5, int))
        code, _, err = run(["evaluate", tmp_path / "m", tmp_path / "narrow.cnpy"], capsys)
        assert code == 2 and "features" in err

    def test_regression_mse(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(400, 2))
        write_dataset(tmp_path / "r.cnpy", X, X[:, 0] * 2, task="regression")
        run(["train", tmp_path / "r.cnpy", "--output", tmp_path / "m", "--trees", "2",
             "--criterion", "variance", "--subset-size", "200", "--leaf-bucket-size", "100"],
            capsys)
        code, out, _ = run(["evaluate", tmp_path / "m", tmp_path / "r.cnpy"], capsys)
        assert code == 0 and out.startswith("mse: ")
        assert float(out.split()[1]) < 0.01

    def test_missing_model(self, tmp_path, datasets, capsys):
        code, _, _ = run(["evaluate", tmp_path / "none.zip", datasets[1]], capsys)
        assert code == 3


class TestBenchmark:
    def test_grid_rows(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        code, _, _ = run(["benchmark", "--generate", "rare-class", "--schemes", "woody,subsets",
                          "--sizes", "1000,2000", "--seeds", "0,1", "--trees", "2",
                          "--subset-size", "100", "--leaf-bucket-size", "200",
                          "--test-rows", "1000", "--output", out], capsys)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 8
        assert out.read_text().splitlines()[0].split(",") == BENCH_COLUMNS
        assert all(r["status"] == "ok" for r in rows)
        for r in rows:
            assert 0 <= float(r["metric_value"]) <= 1
            assert float(r["t_sample_top"]) + float(r["t_distribute"]) + \
                float(r["t_bottom"]) <= float(r["t_total"]) + 1e-6

    def test_deterministic_modulo_timing(self, tmp_path, capsys):
        args = ["benchmark", "--generate", "skewed", "--schemes", "woody", "--sizes", "800",
                "--seeds", "4", "--trees", "2", "--subset-size", "200",
                "--leaf-bucket-size", "100", "--test-rows", "500", "--output"]
        run(args + [tmp_path / "a.csv"], capsys)
        run(args + [tmp_path / "b.csv"], capsys)
        strip = [c for c in BENCH_COLUMNS if not c.startswith("t_")]
        a = [{k: r[k] for k in strip} for r in csv.DictReader((tmp_path / "a.csv").open())]
        b = [{k: r[k] for k in strip} for r in csv.DictReader((tmp_path / "b.csv").open())]
        assert a == b

    def test_failed_cell_recorded(self, tmp_path, datasets, capsys):
        out = tmp_path / "b.csv"
        code, _, _ = run(["benchmark", datasets[0], "--schemes", "woody", "--sizes",
                          "1000,99999", "--seeds", "0", "--trees", "2", "--subset-size", "500",
                          "--leaf-bucket-size", "200", "--output", out], capsys)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["status"] for r in rows] == ["ok", "error"]
        assert "exceeds" in rows[1]["error"]

    def test_woody_accuracy_trend(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        run(["benchmark", "--generate", "rare-class", "--schemes", "woody",
             "--sizes", "500,4000,32000", "--seeds", "0,1,2", "--trees", "4",
             "--leaf-bucket-size", "2000", "--test-rows", "10000", "--output", out], capsys)
        rows = list(csv.DictReader(out.open()))
        mean = {}
        for r in rows:
            mean.setdefault(int(r["n_train"]), []).append(float(r["metric_value"]))
        acc = [np.mean(mean[n]) for n in sorted(mean)]
        assert all(b >= a - 0.01 for a, b in zip(acc, acc[1:])), acc

    def test_needs_data(self, capsys):
        code, _, _ = run(["benchmark", "--sizes", "10"], capsys)
        assert code == 2


def test_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "canopy.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    for cmd in ("ingest", "generate", "train", "predict", "evaluate", "benchmark"):
        assert cmd in out.stdout


def test_generate(tmp_path, capsys):
    code, out, _ = run(["generate", "--generate", "skewed", "--rows", "1000", "--output",
                        tmp_path / "s.cnpy"], capsys)
    assert code == 0 and "n_rows=1000" in out
    h = open_dataset(tmp_path / "s.cnpy")
    assert (h.n_features, h.n_classes) == (2, 2)


def test_flag_names():
    p = subprocess.run([sys.executable, "-m", "canopy.cli", "train", "--help"],
                       capture_output=True, text=True).stdout
    for flag in ("--scheme", "--trees", "--top-trees", "--bottom-per-top", "--lambda",
                 "--subset-size", "--leaf-bucket-size", "--chunk-size", "--store",
                 "--scratch-dir", "--seed", "--jobs", "--output", "--format",
                 "--hard-cap-multiplier"):
        assert flag in p
