"""Label-filtering indexes: label-aware Vamana graphs (base and stitched)
and the fused joint-distance index with soft attribute matching."""
from __future__ import annotations

from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import kernel
from .baseline import apply_prune, build_vamana, pairwise_l2, sampled_medoid
from .core import AttributedDataset, DistanceContext, SearchResult
from .kernel import beam_search


class BuildError(ValueError):
    pass


_EMPTY_IDS = np.empty(0, dtype=np.int64)


class _DictView:
    def __init__(self, adj: Dict[int, np.ndarray]):
        self.adj = adj

    def neighbors(self, u: int) -> np.ndarray:
        return self.adj.get(u, _EMPTY_IDS)


class _MaskedDictView:
    """Adjacency view that drops edges to nodes outside a membership mask
    before any distance is computed; membership is an attribute lookup, so
    this is edge filtering rather than distance work."""

    def __init__(self, adj: Dict[int, np.ndarray], mask: np.ndarray):
        self.adj = adj
        self.mask = mask

    def neighbors(self, u: int) -> np.ndarray:
        nbrs = self.adj.get(u, _EMPTY_IDS)
        if len(nbrs) == 0:
            return nbrs
        return nbrs[self.mask[nbrs]]


class FilteredVamanaIndex:
    """Vamana-style graph whose edges are pruned label-aware and whose
    searches start from per-label start points."""

    def __init__(self, ds: AttributedDataset, M: int,
                 adjacency: Dict[int, np.ndarray], start_points: Dict[int, int]):
        self.ds = ds
        self.M = M
        self.adjacency = adjacency
        self.start_points = start_points

    def search(self, q: np.ndarray, label: int, ef: int, k: int,
               ctx: Optional[DistanceContext] = None) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        if label not in self.start_points:
            return SearchResult(ids=[], distances=[], comparisons=ctx.count)
        accept = self.ds.label_members(label)
        # non-carriers are never expanded nor reported, so restricting the
        # view to carriers skips their distance evaluations entirely
        view = _MaskedDictView(self.adjacency, accept)
        return beam_search(view, [self.start_points[label]],
                           q, ef, k, ctx, accept=accept, expand_nonaccepted=False)

    def reachable_carriers(self, label: int) -> set:
        """Carriers reachable from the label start using carrier nodes only."""
        members = self.ds.label_members(label)
        start = self.start_points[label]
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in self.adjacency.get(u, ()):
                v = int(v)
                if v not in seen and members[v]:
                    seen.add(v)
                    stack.append(v)
        return seen


def _label_start_points(ds: AttributedDataset, seed: int) -> Dict[int, int]:
    starts: Dict[int, int] = {}
    all_labels = sorted({lab for s in ds.labels for lab in s})
    for lab in all_labels:
        carriers = np.where(ds.label_members(lab))[0]
        starts[lab] = sampled_medoid(ds.vectors, carriers, sample=100, seed=seed)
    return starts


def build_filtered_vamana(ds: AttributedDataset, M: int, ef_construction: int,
                          seed: int = 0) -> FilteredVamanaIndex:
    n = ds.n
    for i, s in enumerate(ds.labels):
        if not s:
            raise BuildError(f"point {i} has no label")
    rng = np.random.default_rng(seed)
    starts = _label_start_points(ds, seed)
    # random same-label initial edges, re-pruned in one pass
    adjacency: Dict[int, np.ndarray] = {}
    carriers_of = {lab: np.where(ds.label_members(lab))[0] for lab in starts}
    for i in range(n):
        pool = np.unique(np.concatenate([carriers_of[lab] for lab in ds.labels[i]]))
        pool = pool[pool != i]
        if len(pool) == 0:
            adjacency[i] = _EMPTY_IDS.copy()
        else:
            picks = rng.choice(pool, size=min(M, len(pool)), replace=False)
            adjacency[i] = np.unique(picks).astype(np.int64)

    accept_cache: Dict[FrozenSet[int], np.ndarray] = {}

    def accept_for(labels: FrozenSet[int]) -> np.ndarray:
        if labels not in accept_cache:
            mask = np.zeros(n, dtype=bool)
            for lab in labels:
                mask |= ds.label_members(lab)
            accept_cache[labels] = mask
        return accept_cache[labels]

    label_of = lambda j: ds.labels[j]
    ctx = DistanceContext(ds.vectors)

    def reprune(node: int, cand_ids, cand_dists) -> np.ndarray:
        kept = apply_prune(ds.vectors, cand_ids, cand_dists, M, "label-covered",
                           label_of=label_of, owner_labels=ds.labels[node])
        return np.array(kept, dtype=np.int64)

    for i in rng.permutation(n):
        i = int(i)
        entries = [starts[lab] for lab in ds.labels[i]]
        res = beam_search(_DictView(adjacency), entries, ds.vectors[i],
                          ef_construction, ef_construction, ctx,
                          accept=accept_for(ds.labels[i]))
        cand = [(c, d) for c, d in zip(res.ids, res.distances) if c != i]
        adjacency[i] = reprune(i, [c for c, _ in cand], [d for _, d in cand])
        for t in adjacency[i]:
            t = int(t)
            if i in adjacency[t]:
                continue
            adjacency[t] = np.append(adjacency[t], i)
            if len(adjacency[t]) > M:
                ids = adjacency[t]
                dists = np.linalg.norm(ds.vectors[ids] - ds.vectors[t], axis=1)
                adjacency[t] = reprune(t, ids, dists)
    return FilteredVamanaIndex(ds, M, adjacency, starts)


def build_stitched(ds: AttributedDataset, M_small: int, M: int,
                   ef_construction: int, seed: int = 0) -> FilteredVamanaIndex:
    """Per-label Vamana subgraphs over each label's carriers, unioned and
    re-pruned label-aware to the final degree cap."""
    for i, s in enumerate(ds.labels):
        if not s:
            raise BuildError(f"point {i} has no label")
    starts = _label_start_points(ds, seed)
    union: Dict[int, set] = {i: set() for i in range(ds.n)}
    for lab in starts:
        carriers = np.where(ds.label_members(lab))[0]
        subds = AttributedDataset(ds.vectors[carriers])
        sub = build_vamana(subds, M=min(M_small, max(len(carriers) - 1, 1)),
                           ef_construction=ef_construction, seed=seed)
        for local, targets in sub.adjacency.items():
            union[int(carriers[local])].update(int(carriers[t]) for t in targets)
    label_of = lambda j: ds.labels[j]
    adjacency: Dict[int, np.ndarray] = {}
    for i, targets in union.items():
        ids = np.array(sorted(targets), dtype=np.int64)
        if len(ids) == 0:
            adjacency[i] = _EMPTY_IDS.copy()
            continue
        if len(ids) <= M:
            # the per-label builds already pruned these; re-pruning would
            # strip the long-range edges that keep each subgraph navigable
            adjacency[i] = ids
            continue
        dists = np.linalg.norm(ds.vectors[ids] - ds.vectors[i], axis=1)
        kept = apply_prune(ds.vectors, ids, dists, M, "label-covered",
                           label_of=label_of, owner_labels=ds.labels[i])
        adjacency[i] = np.array(kept, dtype=np.int64)
    return FilteredVamanaIndex(ds, M, adjacency, starts)


# ---------------------------------------------------------------------------
# Fused joint-distance index
# ---------------------------------------------------------------------------


def joint_distance(a_vec, b_vec, a_attrs, b_attrs, w1: float, w2: float) -> float:
    """Vector distance plus a penalty per mismatched attribute position."""
    a_attrs = np.asarray(a_attrs)
    b_attrs = np.asarray(b_attrs)
    if a_attrs.shape != b_attrs.shape:
        raise ValueError("attribute arity mismatch")
    vec = float(np.linalg.norm(np.asarray(a_vec, dtype=np.float64)
                               - np.asarray(b_vec, dtype=np.float64)))
    mism = int(np.sum(a_attrs != b_attrs))
    return w1 * vec + w2 * mism


class JointDistanceContext(DistanceContext):
    """Counting context whose distances fold in the attribute penalty."""

    def __init__(self, vectors: np.ndarray, attr_matrix: np.ndarray,
                 q_attrs: np.ndarray, w1: float, w2: float):
        super().__init__(vectors)
        self.attr_matrix = attr_matrix
        self.q_attrs = np.asarray(q_attrs)
        self.w1 = w1
        self.w2 = w2

    def to_points(self, q: np.ndarray, ids: np.ndarray) -> np.ndarray:
        self.count += len(ids)
        diff = self.vectors[ids] - q
        vec = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        mism = np.sum(self.attr_matrix[ids] != self.q_attrs, axis=1)
        return self.w1 * vec + self.w2 * mism


class FusedIndex:
    """Graph built and searched under the joint vector+attribute distance.

    Results are ranked by joint distance and may violate a strict filter;
    they are flagged accordingly.  Under a large attribute penalty the
    graph clusters by attribute tuple with few edges between clusters, so
    searches are seeded with one entry per tuple rather than one global
    entry that could strand the beam in the wrong cluster.
    """

    def __init__(self, ds: AttributedDataset, attr_matrix: np.ndarray,
                 adjacency: Dict[int, np.ndarray], entries: List[int],
                 w1: float, w2: float, variant: str):
        self.ds = ds
        self.attr_matrix = attr_matrix
        self.adjacency = adjacency
        self.entries = entries
        self.w1 = w1
        self.w2 = w2
        self.variant = variant

    def search(self, q: np.ndarray, q_attrs: Sequence[int], ef: int, k: int
               ) -> SearchResult:
        ctx = JointDistanceContext(self.ds.vectors, self.attr_matrix,
                                   q_attrs, self.w1, self.w2)
        res = beam_search(_DictView(self.adjacency), self.entries, q, ef, k, ctx)
        res.approximate_on_predicate = True
        return res


def _joint_pairwise(vectors, attr_matrix, rows, w1, w2) -> np.ndarray:
    D = w1 * pairwise_l2(vectors[rows], vectors)
    for col in range(attr_matrix.shape[1]):
        D += w2 * (attr_matrix[rows, col][:, None] != attr_matrix[None, :, col])
    return D


def build_fused(ds: AttributedDataset, M: int, attr_matrix: np.ndarray,
                variant: str = "keep-nearest", w1: float = 1.0,
                w2: Optional[float] = None, seed: int = 0) -> FusedIndex:
    attr_matrix = np.asarray(attr_matrix)
    if attr_matrix.ndim != 2 or attr_matrix.shape[0] != ds.n:
        raise BuildError("attribute matrix must be (n, arity)")
    if w2 is None:
        # one mismatch weighs about one typical vector distance
        rng = np.random.default_rng(seed)
        a = rng.integers(0, ds.n, 1024)
        b = rng.integers(0, ds.n, 1024)
        w2 = float(np.mean(np.linalg.norm(ds.vectors[a] - ds.vectors[b], axis=1)))
    n = ds.n
    adjacency: Dict[int, np.ndarray] = {}
    ids = np.arange(n)
    for start in range(0, n, 1024):
        rows = ids[start : start + 1024]
        D = _joint_pairwise(ds.vectors, attr_matrix, rows, w1, w2)
        D[np.arange(len(rows)), rows] = np.inf
        for r, i in enumerate(rows):
            order = np.lexsort((ids, D[r]))
            if variant == "keep-nearest":
                adjacency[int(i)] = order[:M].astype(np.int64)
            elif variant == "nsw":
                cand = order[: max(2 * M, 32)]
                kept = kernel.prune_rng(
                    [kernel.PruneCandidate(int(c), float(D[r, c])) for c in cand],
                    M,
                    lambda a_, b_: joint_distance(
                        ds.vectors[a_], ds.vectors[b_],
                        attr_matrix[a_], attr_matrix[b_], w1, w2,
                    ),
                )
                adjacency[int(i)] = np.array(kept, dtype=np.int64)
            else:
                raise BuildError(f"unknown fused variant: {variant}")
    # one entry per attribute tuple (most common 64), so every attribute
    # cluster of the joint-distance graph is reachable from the seed set
    tuples, inverse, counts = np.unique(attr_matrix, axis=0,
                                        return_inverse=True,
                                        return_counts=True)
    order = np.argsort(-counts, kind="stable")[:64]
    entries = [sampled_medoid(ds.vectors, np.where(inverse == g)[0],
                              sample=100, seed=seed) for g in order]
    return FusedIndex(ds, attr_matrix, adjacency, entries, w1, w2, variant)
