import numpy as np
import pytest

from fannkit.cli import (
    load_config,
    load_dataset,
    load_queries,
    main,
    read_predicates,
    write_predicates,
)
from fannkit.core import FilteredQuery, LabelPredicate, RangePredicate
from fannkit.evaluate import load_ground_truth
from fannkit.harness import read_rows_csv, read_vecs


CONFIG = """\
[workload]
n = 400
d = 8
label_count = 4
label_probabilities = 1:0.5 2:0.1
selectivity_levels = 0.1 0.5 1.0
query_count = 5
k = 5
seed = 3

[bench]
methods = prefilter-scan
ef_cap = 128

[method.hnsw-joint]
m = 8
ef_construction = 48
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.ini"
    cfg.write_text(CONFIG)
    data = root / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    return root, cfg, data


class TestConfig:
    def test_typed_values(self, workspace):
        _, cfg, _ = workspace
        parsed = load_config(str(cfg))
        assert parsed["workload"]["n"] == 400
        assert parsed["bench"]["ef_cap"] == 128
        assert parsed["method.hnsw-joint"]["ef_construction"] == 48

    def test_missing_config_is_empty(self):
        assert load_config(None) == {}


class TestPredicateFile:
    def test_round_trip(self, tmp_path):
        queries = [
            FilteredQuery(np.zeros(2, dtype=np.float32), RangePredicate(3, 9)),
            FilteredQuery(np.zeros(2, dtype=np.float32), LabelPredicate(7)),
            FilteredQuery(np.zeros(2, dtype=np.float32), None),
        ]
        p = tmp_path / "q.pred"
        write_predicates(str(p), queries)
        assert p.read_text() == "range,3,9\nlabel,7\nnone\n"
        back = read_predicates(str(p))
        assert back[0] == RangePredicate(3, 9)
        assert back[1] == LabelPredicate(7)
        assert back[2] is None


class TestGenData:
    def test_dataset_files(self, workspace):
        _, _, data = workspace
        ds = load_dataset(str(data))
        assert ds.n == 400 and ds.dim == 8
        assert all(len(s) >= 1 for s in ds.labels)

    def test_reload_matches_write(self, workspace):
        _, _, data = workspace
        mat = read_vecs(str(data / "data.fvecs"))
        assert mat.shape == (400, 8)


class TestPipeline:
    def test_gen_queries(self, workspace):
        root, cfg, data = workspace
        qdir = root / "queries"
        assert main(["gen-queries", "--config", str(cfg), "--data", str(data),
                     "--selectivity", "0.5", "--count", "6",
                     "--out", str(qdir)]) == 0
        queries = load_queries(str(qdir / "queries-s0.5"), k=5)
        assert len(queries) == 6
        assert isinstance(queries[0].predicate, RangePredicate)

    def test_label_queries(self, workspace):
        root, cfg, data = workspace
        qdir = root / "queries"
        assert main(["gen-queries", "--config", str(cfg), "--data", str(data),
                     "--label", "1", "--count", "4", "--out", str(qdir)]) == 0
        queries = load_queries(str(qdir / "queries-label1"), k=5)
        assert all(q.predicate == LabelPredicate(1) for q in queries)

    def test_ground_truth(self, workspace):
        root, cfg, data = workspace
        qdir = root / "queries"
        main(["gen-queries", "--config", str(cfg), "--data", str(data),
              "--selectivity", "0.5", "--count", "6", "--out", str(qdir)])
        out = root / "truth.bin"
        assert main(["ground-truth", "--data", str(data),
                     "--queries", str(qdir / "queries-s0.5"),
                     "--k", "5", "--out", str(out)]) == 0
        truth = load_ground_truth(str(out))
        assert truth.k == 5 and len(truth) == 6

    def test_build_search_matches_in_memory(self, workspace):
        root, cfg, data = workspace
        qdir = root / "queries"
        main(["gen-queries", "--config", str(cfg), "--data", str(data),
              "--selectivity", "0.5", "--count", "6", "--out", str(qdir)])
        idx_path = root / "hnsw.fann"
        assert main(["build", "--config", str(cfg), "--data", str(data),
                     "--method", "hnsw-joint", "--seed", "3",
                     "--out", str(idx_path)]) == 0
        res_path = root / "results.ivecs"
        assert main(["search", "--data", str(data), "--index", str(idx_path),
                     "--queries", str(qdir / "queries-s0.5"),
                     "--ef", "64", "--k", "5", "--out", str(res_path)]) == 0
        rows = read_vecs(str(res_path), kind="i32")
        assert rows.shape == (6, 5)
        ds = load_dataset(str(data))
        for q, ids in zip(load_queries(str(qdir / "queries-s0.5"), k=5), rows):
            for i in ids:
                if i >= 0:
                    assert q.predicate.lo <= ds.numeric_attrs[i] <= \
                        q.predicate.hi

    def test_bench_and_report(self, workspace, capsys):
        root, cfg, data = workspace
        out = root / "bench.csv"
        assert main(["bench", "--config", str(cfg),
                     "--selectivity", "0.5", "1.0", "--out", str(out)]) == 0
        rows = read_rows_csv(str(out))
        assert len(rows) == 2
        assert all(r.method == "prefilter-scan" and not r.failed
                   for r in rows)
        assert (root / "bench.csv.jsonl").exists()
        capsys.readouterr()
        assert main(["report", "--results", str(out)]) == 0
        text = capsys.readouterr().out
        assert "prefilter-scan: 2/2 reached target" in text
