import numpy as np
import pytest

from fannkit.arbitrary import (
    build_acorn,
    build_partitioned,
    compile_predicate,
    joint_filter_search,
    post_filter_search,
    pre_filter_scan,
    predicate_attr_bounds,
)
from fannkit.baseline import build_hnsw
from fannkit.core import (
    AttributedDataset,
    ConjunctionPredicate,
    LabelPredicate,
    RangePredicate,
)


def _oracle_subset(ds, mask, q, k):
    ids = np.where(mask)[0]
    d = np.linalg.norm(ds.vectors[ids] - np.asarray(q, dtype=np.float32), axis=1)
    order = np.lexsort((ids, d))[:k]
    return list(ids[order])


@pytest.fixture(scope="module")
def hnsw(small_uniform):
    return build_hnsw(small_uniform, 12, 80, seed=5)


class TestBitmap:
    def test_fixture_scan(self, fixture_5pt):
        bm = compile_predicate(RangePredicate(25, 55), fixture_5pt)
        assert list(np.where(bm.mask)[0]) == [2, 3, 4]
        assert bm.matched_count == 3

    def test_always_true(self, fixture_5pt):
        bm = compile_predicate(RangePredicate(0, 100), fixture_5pt)
        assert bm.matched_count == 5
        assert bm.selectivity == 1.0

    def test_conjunction_bound(self, small_uniform):
        a = RangePredicate(0, 60_000)
        b = RangePredicate(30_000, 100_000)
        both = compile_predicate(ConjunctionPredicate(a, b), small_uniform)
        ca = compile_predicate(a, small_uniform).matched_count
        cb = compile_predicate(b, small_uniform).matched_count
        assert both.matched_count <= min(ca, cb)


class TestPreFilterScan:
    def test_fixture_ids(self, fixture_5pt):
        bm = compile_predicate(RangePredicate(25, 55), fixture_5pt)
        res = pre_filter_scan(fixture_5pt, bm, np.array([2.1]), 2)
        assert res.ids == [2, 3]

    def test_empty_bitmap(self, fixture_5pt):
        bm = compile_predicate(RangePredicate(90, 99), fixture_5pt)
        res = pre_filter_scan(fixture_5pt, bm, np.array([2.1]), 2)
        assert res.ids == []

    def test_full_ranking(self, fixture_5pt):
        bm = compile_predicate(RangePredicate(0, 100), fixture_5pt)
        res = pre_filter_scan(fixture_5pt, bm, np.array([0.0]), 5)
        assert res.ids == [0, 1, 2, 3, 4]

    def test_comparisons_equal_matched_count(self, small_uniform):
        bm = compile_predicate(RangePredicate(0, 50_000), small_uniform)
        res = pre_filter_scan(small_uniform, bm, np.zeros(16), 10)
        assert res.comparisons == bm.matched_count


class TestPostFilter:
    def test_full_selectivity_equals_plain(self, hnsw, small_uniform):
        bm = compile_predicate(RangePredicate(0, 100_000), small_uniform)
        q = np.full(16, 0.3, dtype=np.float32)
        assert post_filter_search(hnsw, bm, q, 64, 10).ids == \
            hnsw.search(q, 64, 10).ids

    def test_oversampling_formula(self, small_uniform):
        # selectivity 50% with k=10 implies an initial draw of 20
        from fannkit.arbitrary import MembershipBitmap
        mask = np.zeros(small_uniform.n, dtype=bool)
        mask[: small_uniform.n // 2] = True
        bm = MembershipBitmap(mask=mask, matched_count=small_uniform.n // 2)
        assert int(np.ceil(10 / bm.selectivity)) == 20

    def test_partial_flag_on_shortfall(self, small_uniform):
        # a single matched point far from the query is hard to surface
        mask = np.zeros(small_uniform.n, dtype=bool)
        far = int(np.argmax(np.linalg.norm(small_uniform.vectors, axis=1)))
        mask[far] = True
        from fannkit.arbitrary import MembershipBitmap
        bm = MembershipBitmap(mask=mask, matched_count=1)
        idx = build_hnsw(small_uniform, 8, 40, seed=6)
        res = post_filter_search(idx, bm, np.zeros(16, dtype=np.float32), 10, 10)
        assert res.partial or res.ids == [far]

    def test_high_selectivity_recall(self, hnsw, small_uniform):
        bm = compile_predicate(RangePredicate(0, 50_000), small_uniform)
        rng = np.random.default_rng(41)
        hits = total = 0
        for _ in range(30):
            q = rng.random(16, dtype=np.float32)
            oracle = _oracle_subset(small_uniform, bm.mask, q, 10)
            res = post_filter_search(hnsw, bm, q, 128, 10)
            hits += len(set(res.ids) & set(oracle))
            total += len(oracle)
        assert hits / total >= 0.9


class TestJointFilter:
    def test_full_bitmap_equals_plain(self, hnsw, small_uniform):
        bm = compile_predicate(RangePredicate(0, 100_000), small_uniform)
        q = np.full(16, 0.6, dtype=np.float32)
        assert joint_filter_search(hnsw, bm, q, 64, 10).ids == \
            hnsw.search(q, 64, 10).ids

    def test_empty_bitmap(self, hnsw, small_uniform):
        from fannkit.arbitrary import MembershipBitmap
        bm = MembershipBitmap(mask=np.zeros(small_uniform.n, dtype=bool),
                              matched_count=0)
        res = joint_filter_search(hnsw, bm, np.zeros(16, dtype=np.float32),
                                  32, 5, expand_nonmembers=True)
        assert res.ids == []

    def test_members_only(self, hnsw, small_uniform):
        bm = compile_predicate(RangePredicate(20_000, 70_000), small_uniform)
        rng = np.random.default_rng(42)
        for _ in range(20):
            res = joint_filter_search(hnsw, bm, rng.random(16, dtype=np.float32),
                                      96, 10, expand_nonmembers=True)
            assert all(bm.mask[i] for i in res.ids)


@pytest.fixture(scope="module")
def acorn(small_uniform):
    return build_acorn(small_uniform, 12, 80, seed=7)


@pytest.fixture(scope="module")
def part(small_uniform):
    return build_partitioned(small_uniform, P=8, M=8, ef_construction=48,
                             seed=9)


class TestAcorn:
    def test_tau_default(self, acorn):
        assert acorn.tau == 6

    def test_full_bitmap_matches_members(self, acorn, small_uniform):
        bm = compile_predicate(RangePredicate(0, 100_000), small_uniform)
        res = acorn.search(np.full(16, 0.2, dtype=np.float32), bm, 64, 10)
        assert len(res.ids) == 10

    def test_alternating_path_uses_two_hop(self):
        # path graph over 1-D points; only even ids are members, so odd
        # hops are usable purely through the two-hop expansion
        vecs = np.arange(12, dtype=np.float32).reshape(-1, 1)
        ds = AttributedDataset(vecs, list(range(12)))
        idx = build_acorn(ds, 2, 16, tau=2, seed=8)
        # overwrite layer 0 with a strict path to force the topology
        idx.hnsw.layers = [
            {i: np.array([j for j in (i - 1, i + 1) if 0 <= j < 12],
                         dtype=np.int64) for i in range(12)}
        ]
        idx.hnsw.max_level = 0
        idx.hnsw.entry_point = 0
        bm = compile_predicate(RangePredicate(0, 100), ds)
        bm.mask[:] = False
        bm.mask[::2] = True
        bm.matched_count = 6
        res = idx.search(np.array([11.0], dtype=np.float32), bm, 12, 3)
        assert 10 in res.ids

    def test_members_only_results(self, acorn, small_uniform):
        bm = compile_predicate(RangePredicate(0, 30_000), small_uniform)
        rng = np.random.default_rng(43)
        for _ in range(20):
            res = acorn.search(rng.random(16, dtype=np.float32), bm, 96, 10)
            assert all(bm.mask[i] for i in res.ids)

    def test_low_selectivity_recall(self, acorn, small_uniform):
        bm = compile_predicate(RangePredicate(0, 5_000), small_uniform)
        rng = np.random.default_rng(44)
        hits = total = 0
        for _ in range(20):
            q = rng.random(16, dtype=np.float32)
            oracle = _oracle_subset(small_uniform, bm.mask, q, 10)
            res = acorn.search(q, bm, 128, 10)
            hits += len(set(res.ids) & set(oracle))
            total += len(oracle)
        assert hits / total >= 0.9


class TestPartitioned:
    def test_partitions_tile_ids(self, part, small_uniform):
        seen = np.concatenate(part.partitions)
        assert sorted(seen) == list(range(small_uniform.n))

    def test_partition_selection_by_bounds(self, part):
        pred = RangePredicate(part.bounds[2][0], part.bounds[2][1])
        chosen = part.select_partitions(pred)
        assert 2 in chosen
        for p in chosen:
            lo, hi = part.bounds[p]
            assert not (pred.hi < lo or pred.lo > hi)

    def test_predicate_outside_all_bounds(self, part, small_uniform):
        pred = RangePredicate(200_000, 300_000)
        bm = compile_predicate(pred, small_uniform)
        res = part.search(np.zeros(16, dtype=np.float32), pred, bm, 32, 5)
        assert res.ids == []

    def test_matches_oracle_via_scan_path(self, part, small_uniform):
        pred = RangePredicate(0, 2_000)  # low in-partition selectivity
        bm = compile_predicate(pred, small_uniform)
        rng = np.random.default_rng(45)
        q = rng.random(16, dtype=np.float32)
        res = part.search(q, pred, bm, 64, 10)
        assert res.ids == _oracle_subset(small_uniform, bm.mask, q, 10)

    def test_label_predicate_searches_all_partitions(self, part, labeled_ds,
                                                     small_uniform):
        assert predicate_attr_bounds(LabelPredicate(1)) is None
        pred = LabelPredicate(1)
        assert part.select_partitions(pred) == list(range(part.P))

    def test_conjunction_bounds_intersect(self):
        pred = ConjunctionPredicate(RangePredicate(10, 80),
                                    RangePredicate(50, 120))
        assert predicate_attr_bounds(pred) == (50, 80)
