import numpy as np
import pytest

from fannkit.baseline import build_hnsw
from fannkit.core import FilteredQuery, RangePredicate, SearchResult
from fannkit.evaluate import (
    GroundTruthEntry,
    UndefinedRecallError,
    cached_ground_truth,
    dataset_digest,
    dataset_hardness,
    ground_truth,
    load_ground_truth,
    mean_recall,
    measure_qps,
    recall_at_k,
    sampled_mean_pairwise,
    save_ground_truth,
    timed_search,
    workload_digest,
)


class TestGroundTruth:
    def test_fixture_range(self, fixture_5pt):
        q = FilteredQuery(np.array([2.1]), RangePredicate(25, 55), k=2)
        truth = ground_truth(fixture_5pt, [q], 2)
        assert list(truth.entries[0].ids) == [2, 3]
        assert truth.entries[0].distances == pytest.approx([0.1, 0.9])

    def test_short_entry_flag(self, fixture_5pt):
        q = FilteredQuery(np.array([0.0]), RangePredicate(10, 10), k=5)
        e = ground_truth(fixture_5pt, [q], 5).entries[0]
        assert list(e.ids) == [0] and e.short

    def test_empty_entry(self, fixture_5pt):
        q = FilteredQuery(np.array([0.0]), RangePredicate(90, 95), k=3)
        e = ground_truth(fixture_5pt, [q], 3).entries[0]
        assert len(e.ids) == 0 and e.short

    def test_no_predicate_is_plain_knn(self, small_uniform):
        rng = np.random.default_rng(51)
        q = rng.random(16, dtype=np.float32)
        truth = ground_truth(small_uniform, [FilteredQuery(q, None, 10)], 10)
        d = np.linalg.norm(small_uniform.vectors - q, axis=1)
        oracle = np.lexsort((np.arange(small_uniform.n), d))[:10]
        assert list(truth.entries[0].ids) == list(oracle)

    def test_threaded_matches_serial(self, small_uniform):
        rng = np.random.default_rng(52)
        queries = [FilteredQuery(rng.random(16, dtype=np.float32),
                                 RangePredicate(0, 50_000), 5)
                   for _ in range(20)]
        t1 = ground_truth(small_uniform, queries, 5, workers=1)
        t4 = ground_truth(small_uniform, queries, 5, workers=4)
        for a, b in zip(t1.entries, t4.entries):
            assert list(a.ids) == list(b.ids)


class TestRecall:
    def _entry(self, ids):
        return GroundTruthEntry(ids=np.asarray(ids, dtype=np.int64),
                                distances=np.zeros(len(ids)))

    def test_perfect(self):
        res = SearchResult(ids=[3, 1, 2], distances=[0.0] * 3)
        assert recall_at_k(res, self._entry([1, 2, 3])) == 1.0

    def test_zero(self):
        res = SearchResult(ids=[9, 8], distances=[0.0] * 2)
        assert recall_at_k(res, self._entry([1, 2])) == 0.0

    def test_partial_overlap(self):
        res = SearchResult(ids=list(range(9)) + [99], distances=[0.0] * 10)
        assert recall_at_k(res, self._entry(list(range(10)))) == 0.9

    def test_empty_truth_raises(self):
        with pytest.raises(UndefinedRecallError):
            recall_at_k(SearchResult(ids=[], distances=[]), self._entry([]))

    def test_mean_skips_empty(self):
        results = [SearchResult(ids=[1], distances=[0.0]),
                   SearchResult(ids=[], distances=[])]
        truth_entries = [self._entry([1]), self._entry([])]
        from fannkit.evaluate import GroundTruth
        assert mean_recall(results, GroundTruth(k=1, entries=truth_entries)) \
            == 1.0


class TestHardness:
    def test_pairwise_two_points(self):
        vecs = np.array([[0.0, 0.0], [3.0, 4.0]], dtype=np.float32)
        assert sampled_mean_pairwise(vecs, pairs=2000) == pytest.approx(
            2.5, abs=0.2)  # half the draws are identical pairs

    def test_full_coverage_zero_divergence(self, small_uniform):
        rng = np.random.default_rng(53)
        queries = [FilteredQuery(rng.random(16, dtype=np.float32), None, 10)]
        truth = ground_truth(small_uniform, queries, 10)
        rep = dataset_hardness(small_uniform, queries, truth)
        assert rep.js_div == pytest.approx(0.0, abs=1e-12)
        assert rep.dis_ratio > 0.0

    def test_narrow_queries_increase_divergence(self, small_uniform):
        rng = np.random.default_rng(54)
        wide = [FilteredQuery(rng.random(16, dtype=np.float32), None, 10)]
        narrow = [FilteredQuery(rng.random(16, dtype=np.float32),
                                RangePredicate(0, 2_000), 10)]
        tw = ground_truth(small_uniform, wide, 10)
        tn = ground_truth(small_uniform, narrow, 10)
        rw = dataset_hardness(small_uniform, wide, tw)
        rn = dataset_hardness(small_uniform, narrow, tn)
        assert rn.js_div > rw.js_div

    def test_estimator_tag(self, small_uniform):
        queries = [FilteredQuery(np.zeros(16, dtype=np.float32), None, 5)]
        truth = ground_truth(small_uniform, queries, 5)
        rep = dataset_hardness(small_uniform, queries, truth)
        assert rep.estimator == "cluster-histogram-64"


class TestTimedSearch:
    def test_phases_present_and_sum_to_positive(self, small_uniform):
        idx = build_hnsw(small_uniform, 8, 48, seed=55)
        res = timed_search(idx.search, np.zeros(16, dtype=np.float32), 64, 10)
        for phase in ("distance_compute", "edge_filtering",
                      "heap_maintenance", "other"):
            assert phase in res.phase_times
            assert res.phase_times[phase] >= 0.0
        assert res.phase_times["distance_compute"] > 0.0

    def test_untimed_search_has_no_phases(self, small_uniform):
        idx = build_hnsw(small_uniform, 8, 48, seed=55)
        res = idx.search(np.zeros(16, dtype=np.float32), 64, 10)
        assert res.phase_times == {}


class TestCache:
    def test_round_trip(self, small_uniform, tmp_path):
        rng = np.random.default_rng(56)
        queries = [FilteredQuery(rng.random(16, dtype=np.float32),
                                 RangePredicate(0, 40_000), 5)
                   for _ in range(6)]
        queries.append(FilteredQuery(np.zeros(16, dtype=np.float32),
                                     RangePredicate(99_999, 99_999), 5))
        truth = ground_truth(small_uniform, queries, 5)
        path = tmp_path / "gt.bin"
        save_ground_truth(str(path), truth)
        back = load_ground_truth(str(path))
        assert back.k == truth.k and len(back) == len(truth)
        for a, b in zip(truth.entries, back.entries):
            assert list(a.ids) == list(b.ids)
            assert a.distances == pytest.approx(list(b.distances))
            assert a.short == b.short

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_ground_truth(str(p))

    def test_cached_reuses_file(self, small_uniform, tmp_path):
        queries = [FilteredQuery(np.full(16, 0.5, dtype=np.float32),
                                 None, 5)]
        t1 = cached_ground_truth(str(tmp_path), small_uniform, queries, 5)
        files = list(tmp_path.iterdir())
        assert len(files) == 1
        t2 = cached_ground_truth(str(tmp_path), small_uniform, queries, 5)
        assert list(t1.entries[0].ids) == list(t2.entries[0].ids)
        assert list(tmp_path.iterdir()) == files

    def test_digests_react_to_content(self, small_uniform, fixture_5pt):
        assert dataset_digest(small_uniform) != dataset_digest(fixture_5pt)
        qa = [FilteredQuery(np.zeros(16, dtype=np.float32), None, 5)]
        qb = [FilteredQuery(np.ones(16, dtype=np.float32), None, 5)]
        assert workload_digest(qa) != workload_digest(qb)


def test_measure_qps_positive(small_uniform):
    idx = build_hnsw(small_uniform, 8, 48, seed=57)
    queries = [FilteredQuery(np.full(16, v, dtype=np.float32), None, 5)
               for v in np.linspace(0, 1, 10)]
    qps = measure_qps(lambda q: idx.search(q.vector, 32, q.k), queries)
    assert qps > 0.0
