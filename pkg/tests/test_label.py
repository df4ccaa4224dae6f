import numpy as np
import pytest

from fannkit.core import AttributedDataset
from fannkit.labelindex import (
    BuildError,
    build_filtered_vamana,
    build_fused,
    build_stitched,
    joint_distance,
)


def _label_oracle(ds, q, label, k):
    ids = np.where(ds.label_members(label))[0]
    d = np.linalg.norm(ds.vectors[ids] - np.asarray(q, dtype=np.float32), axis=1)
    order = np.lexsort((ids, d))[:k]
    return list(ids[order])


@pytest.fixture(scope="module")
def fvamana(labeled_ds):
    return build_filtered_vamana(labeled_ds, 12, 80, seed=1)


@pytest.fixture(scope="module")
def stitched(labeled_ds):
    return build_stitched(labeled_ds, 6, 12, 80, seed=1)


class TestFilteredVamana:
    def test_unlabeled_point_rejected(self):
        ds = AttributedDataset(np.zeros((3, 2), dtype=np.float32),
                               labels=[frozenset({1}), frozenset(),
                                       frozenset({1})])
        with pytest.raises(BuildError):
            build_filtered_vamana(ds, 4, 16)

    def test_degree_cap(self, fvamana):
        assert max(len(v) for v in fvamana.adjacency.values()) <= 12

    def test_every_label_has_carrier_start(self, fvamana, labeled_ds):
        for lab, start in fvamana.start_points.items():
            assert lab in labeled_ds.labels[start]

    def test_results_carry_query_label(self, fvamana, labeled_ds):
        rng = np.random.default_rng(31)
        for _ in range(50):
            q = rng.random(16, dtype=np.float32)
            res = fvamana.search(q, 1, 64, 10)
            assert res.ids
            for i in res.ids:
                assert 1 in labeled_ds.labels[i]

    def test_absent_label_empty(self, fvamana):
        res = fvamana.search(np.zeros(16, dtype=np.float32), 999, 32, 5)
        assert res.ids == []

    def test_recall_on_majority_label(self, fvamana, labeled_ds):
        rng = np.random.default_rng(32)
        hits = total = 0
        for _ in range(30):
            q = rng.random(16, dtype=np.float32)
            oracle = _label_oracle(labeled_ds, q, 1, 10)
            res = fvamana.search(q, 1, 128, 10)
            hits += len(set(res.ids) & set(oracle))
            total += len(oracle)
        assert hits / total >= 0.9

    def test_rare_label_exact_when_ef_covers(self, fvamana, labeled_ds):
        carriers = int(labeled_ds.label_members(2).sum())
        rng = np.random.default_rng(33)
        q = rng.random(16, dtype=np.float32)
        res = fvamana.search(q, 2, max(carriers, 10), 10)
        reach = fvamana.reachable_carriers(2)
        if len(reach) == carriers:
            assert res.ids == _label_oracle(labeled_ds, q, 2, 10)

    def test_disjoint_populations_no_leakage(self):
        rng = np.random.default_rng(34)
        vecs = rng.random((400, 8), dtype=np.float32)
        labels = [frozenset({i % 2}) for i in range(400)]
        ds = AttributedDataset(vecs, labels=labels)
        idx = build_filtered_vamana(ds, 8, 48, seed=2)
        for _ in range(100):
            q = rng.random(8, dtype=np.float32)
            for lab in (0, 1):
                for i in idx.search(q, lab, 32, 5).ids:
                    assert lab in ds.labels[i]


class TestStitched:
    def test_degree_cap(self, stitched):
        assert max(len(v) for v in stitched.adjacency.values()) <= 12

    def test_results_carry_query_label(self, stitched, labeled_ds):
        rng = np.random.default_rng(35)
        for _ in range(30):
            q = rng.random(16, dtype=np.float32)
            for i in stitched.search(q, 1, 64, 10).ids:
                assert 1 in labeled_ds.labels[i]

    def test_recall(self, stitched, labeled_ds):
        rng = np.random.default_rng(36)
        hits = total = 0
        for _ in range(30):
            q = rng.random(16, dtype=np.float32)
            oracle = _label_oracle(labeled_ds, q, 1, 10)
            res = stitched.search(q, 1, 192, 10)
            hits += len(set(res.ids) & set(oracle))
            total += len(oracle)
        assert hits / total >= 0.9

    def test_per_label_subgraph_connectivity(self, labeled_ds):
        """Each label's pre-merge subgraph must reach every carrier from
        the label start point; audited on the per-label Vamana builds."""
        from fannkit.baseline import build_vamana
        for lab in (1, 2):
            carriers = np.where(labeled_ds.label_members(lab))[0]
            subds = AttributedDataset(labeled_ds.vectors[carriers])
            sub = build_vamana(subds, M=6, ef_construction=80, seed=1)
            assert sub.connected_from_medoid()

    def test_merged_reachability_near_complete(self, stitched, labeled_ds):
        carriers = int(labeled_ds.label_members(1).sum())
        reach = stitched.reachable_carriers(1)
        assert len(reach) >= 0.98 * carriers


class TestJointDistance:
    def test_w2_zero_is_l2(self):
        a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        assert joint_distance(a, b, [1, 2], [3, 4], 1.0, 0.0) == pytest.approx(5.0)

    def test_formula(self):
        a, b = np.zeros(2), np.array([2.0, 0.0])
        # one mismatch out of three attributes at w2=0.5 adds 0.5
        got = joint_distance(a, b, [1, 2, 3], [1, 2, 9], 1.0, 0.5)
        assert got == pytest.approx(2.5)

    def test_identity_and_symmetry(self):
        a = np.array([1.0, 2.0])
        assert joint_distance(a, a, [5], [5], 1.0, 3.0) == 0.0
        b = np.array([0.5, 0.5])
        assert joint_distance(a, b, [5], [6], 1.0, 3.0) == \
            joint_distance(b, a, [6], [5], 1.0, 3.0)

    def test_arity_mismatch(self):
        with pytest.raises(ValueError):
            joint_distance(np.zeros(2), np.zeros(2), [1], [1, 2], 1.0, 1.0)


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(37)
    vecs = rng.random((600, 8), dtype=np.float32)
    attrs = rng.integers(0, 3, (600, 1))
    ds = AttributedDataset(vecs)
    return ds, attrs


class TestFusedIndex:
    def test_results_flagged_approximate(self, setup):
        ds, attrs = setup
        idx = build_fused(ds, 8, attrs, seed=3)
        res = idx.search(np.zeros(8, dtype=np.float32), [0], 32, 5)
        assert res.approximate_on_predicate

    def test_large_w2_matches_attrs_exactly(self, setup):
        ds, attrs = setup
        idx = build_fused(ds, 8, attrs, w2=1000.0, seed=3)
        rng = np.random.default_rng(38)
        for _ in range(20):
            q = rng.random(8, dtype=np.float32)
            res = idx.search(q, [1], 64, 10)
            assert all(attrs[i, 0] == 1 for i in res.ids)

    def test_w2_zero_equals_unfiltered_ranking(self, setup):
        ds, attrs = setup
        idx = build_fused(ds, 8, attrs, w2=0.0, seed=3)
        rng = np.random.default_rng(39)
        q = rng.random(8, dtype=np.float32)
        res = idx.search(q, [2], 600, 10)
        d = np.linalg.norm(ds.vectors - q, axis=1)
        oracle = list(np.lexsort((np.arange(600), d))[:10])
        assert res.ids == oracle

    def test_nsw_variant_builds_and_searches(self, setup):
        ds, attrs = setup
        idx = build_fused(ds, 8, attrs, variant="nsw", w2=1000.0, seed=3)
        res = idx.search(np.full(8, 0.5, dtype=np.float32), [0], 64, 10)
        assert len(res.ids) == 10

    def test_bad_variant(self, setup):
        ds, attrs = setup
        with pytest.raises(BuildError):
            build_fused(ds, 8, attrs, variant="mystery")

    def test_attr_matrix_shape_checked(self, setup):
        ds, _ = setup
        with pytest.raises(BuildError):
            build_fused(ds, 8, np.zeros((10, 1), dtype=np.int64))
