"""Range-filtering indexes: segmented edges, segment-tree subgraphs, and
segment-partitioned HNSW with selectivity-based dispatch.

All three structures work in attribute-rank space (rank r is the r-th
smallest attribute); public search methods translate ranks back to ids.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernel
from .baseline import apply_prune, pairwise_l2, sampled_medoid
from .core import AttributedDataset, DistanceContext, SearchResult
from .kernel import NoEntryError, PruneCandidate, beam_search, select_entry_points_even


def _rank_result(res: SearchResult, attr_rank: np.ndarray) -> SearchResult:
    res.ids = [int(attr_rank[r]) for r in res.ids]
    return res


def _rank_entry_points(lo: int, hi: int, count: int) -> List[int]:
    """Evenly spaced ranks in [lo, hi]; midpoint when count is 1."""
    if lo > hi:
        raise NoEntryError("empty rank range")
    if count == 1:
        return [(lo + hi) // 2]
    span = hi - lo
    return list(dict.fromkeys(lo + (j * span) // (count - 1) for j in range(count)))


# ---------------------------------------------------------------------------
# Segmented-edge graph
# ---------------------------------------------------------------------------


class _SegmentedView:
    """Edge view for one query range: an out-edge is usable when its
    creation rank is <= u and the query left bound falls in its validity
    interval, which keeps both endpoints inside [l, u]."""

    def __init__(self, graph: "SegmentedEdgeGraph", l: int, u: int):
        self.graph = graph
        self.l = l
        self.u = u

    def neighbors(self, r: int) -> np.ndarray:
        g = self.graph
        tgt = g.edge_target[r]
        if len(tgt) == 0:
            return tgt
        mask = (
            (g.edge_group[r] <= self.u)
            & (g.edge_llo[r] <= self.l)
            & (self.l <= g.edge_lhi[r])
        )
        return tgt[mask]


class SegmentedEdgeGraph:
    """Graph whose edges carry left-bound validity intervals, built by
    inserting points in ascending attribute order and progressively
    re-selecting the top-M neighbor set as the left bound shrinks the
    candidate pool."""

    def __init__(self, ds: AttributedDataset, M: int, ef_construction: int,
                 prune: str = "keep-nearest", seed: int = 0,
                 keep_build_log: bool = True):
        self.ds = ds
        self.M = M
        self.ef_construction = ef_construction
        self.prune = prune
        self.seed = seed
        self.n = ds.n
        self.rvecs = ds.vectors[ds.attr_rank]
        # per source rank: parallel edge arrays
        self.edge_target: List[np.ndarray] = []
        self.edge_llo: List[np.ndarray] = []
        self.edge_lhi: List[np.ndarray] = []
        self.edge_group: List[np.ndarray] = []
        # per rank: ascending (l_start, neighbor-set) breakpoints
        self.build_log: Dict[int, List[Tuple[int, Tuple[int, ...]]]] = {}
        self.keep_build_log = keep_build_log

    # -- construction ------------------------------------------------------

    def build(self) -> "SegmentedEdgeGraph":
        n = self.n
        # list-backed during construction, frozen to arrays at the end
        lists = [([], [], [], []) for _ in range(n)]
        self.edge_target = [np.empty(0, dtype=np.int64) for _ in range(n)]
        self.edge_llo = [np.empty(0, dtype=np.int64) for _ in range(n)]
        self.edge_lhi = [np.empty(0, dtype=np.int64) for _ in range(n)]
        self.edge_group = [np.empty(0, dtype=np.int64) for _ in range(n)]
        ctx = DistanceContext(self.rvecs)
        for i in range(n):
            intervals, log = self._select_edges(i, ctx)
            if self.keep_build_log:
                self.build_log[i] = log
            touched = {i}
            for target, llo, lhi in intervals:
                for src, dst in ((i, target), (target, i)):
                    t, lo, hi, g = lists[src]
                    t.append(dst)
                    lo.append(llo)
                    hi.append(lhi)
                    g.append(i)
                touched.add(target)
            for r in touched:
                self._freeze(lists, r)
        return self

    def _freeze(self, lists, r: int) -> None:
        t, lo, hi, g = lists[r]
        self.edge_target[r] = np.array(t, dtype=np.int64)
        self.edge_llo[r] = np.array(lo, dtype=np.int64)
        self.edge_lhi[r] = np.array(hi, dtype=np.int64)
        self.edge_group[r] = np.array(g, dtype=np.int64)

    def _candidate_pool(self, i: int, ctx: DistanceContext) -> Tuple[np.ndarray, np.ndarray]:
        """Search the graph over [0, i-1] plus the nearest preceding ranks
        by attribute; distances are computed once and reused for every
        left bound."""
        window = max(2 * self.M, 32)
        near = list(range(max(0, i - window), i))
        pool = set(near)
        if i > 1:
            entries = _rank_entry_points(0, i - 1, 3)
            res = beam_search(
                _SegmentedView(self, 0, i - 1), entries, self.rvecs[i],
                self.ef_construction, self.ef_construction, ctx,
            )
            pool.update(res.ids)
        ids = np.fromiter(pool, dtype=np.int64)
        dists = np.linalg.norm(self.rvecs[ids] - self.rvecs[i], axis=1)
        return ids, dists

    def _select_edges(self, i, ctx):
        """Neighbor sets for every left bound l in [0, i-1], returned as
        interval-compressed edges plus the breakpoint log."""
        if i == 0:
            return [], []
        ids, dists = self._candidate_pool(i, ctx)
        if self.prune == "keep-nearest":
            sets_desc = self._sweep_keep_nearest(ids, dists, i)
        else:
            sets_desc = self._sweep_generic(ids, dists, i)
        # sets_desc: [(l, neighbor tuple)] with l descending; constant in
        # between. Convert to ascending breakpoints.
        log: List[Tuple[int, Tuple[int, ...]]] = []
        for l, nbrs in reversed(sets_desc):
            if not log or log[-1][1] != nbrs:
                log.append((l, nbrs))
        # Compress per-target runs of consecutive breakpoint intervals.
        intervals: List[Tuple[int, int, int]] = []
        open_runs: Dict[int, int] = {}
        for idx, (l_start, nbrs) in enumerate(log):
            l_end = (log[idx + 1][0] - 1) if idx + 1 < len(log) else i - 1
            current = set(nbrs)
            for t in list(open_runs):
                if t not in current:
                    intervals.append((t, open_runs.pop(t), l_start - 1))
            for t in current:
                if t not in open_runs:
                    open_runs[t] = l_start
        for t, start in open_runs.items():
            intervals.append((t, start, i - 1))
        # Run ends above use the *next* breakpoint start, which is correct
        # because sets are constant between breakpoints.
        return intervals, log

    def _sweep_keep_nearest(self, ids, dists, i):
        """Top-M per left bound via a descending sweep that inserts
        candidates as the left bound passes their rank."""
        by_rank: Dict[int, Tuple[float, int]] = {
            int(r): (float(d), int(r)) for r, d in zip(ids, dists)
        }
        top: List[Tuple[float, int]] = []
        sets_desc: List[Tuple[int, Tuple[int, ...]]] = []
        prev: Tuple[int, ...] = ()
        for l in range(i - 1, -1, -1):
            cand = by_rank.get(l)
            if cand is not None:
                bisect.insort(top, cand)
                if len(top) > self.M:
                    top.pop()
            current = tuple(sorted(r for _, r in top))
            if not sets_desc or current != prev:
                sets_desc.append((l, current))
                prev = current
            elif sets_desc:
                sets_desc[-1] = (l, prev)
        return sets_desc

    def _sweep_generic(self, ids, dists, i):
        """Recompute the pruned set each time a kept member drops out of the
        shrinking candidate range; dropping non-kept candidates cannot
        change the pruning outcome."""
        order = np.lexsort((ids, dists))
        pool = [(int(ids[j]), float(dists[j])) for j in order]
        D = pairwise_l2(self.rvecs[[p[0] for p in pool]])
        pos = {r: j for j, (r, _) in enumerate(pool)}
        dist = lambda a, b: float(D[pos[a], pos[b]])

        def prune_at(l: int) -> Tuple[int, ...]:
            cands = [PruneCandidate(r, d) for r, d in pool if r >= l]
            if self.prune == "rng":
                kept = kernel.prune_rng(cands, self.M, dist)
            else:
                raise ValueError(f"unsupported segmented-edge prune: {self.prune}")
            return tuple(sorted(kept))

        sets_asc: List[Tuple[int, Tuple[int, ...]]] = []
        l = 0
        while l < i:
            current = prune_at(l)
            sets_asc.append((l, current))
            if not current:
                break
            l = min(current) + 1
        return list(reversed(sets_asc))

    # -- search ------------------------------------------------------------

    def search(self, q: np.ndarray, rank_range: Tuple[int, int], ef: int, k: int,
               ctx: Optional[DistanceContext] = None, ep_count: int = 3) -> SearchResult:
        l, u = rank_range
        if not (0 <= l <= u < self.n):
            raise NoEntryError(f"invalid rank range ({l}, {u})")
        ctx = ctx or DistanceContext(self.rvecs)
        if ctx.vectors is not self.rvecs:
            ctx = DistanceContext(self.rvecs)
        entries = _rank_entry_points(l, u, ep_count)
        res = beam_search(_SegmentedView(self, l, u), entries, q, ef, k, ctx)
        return _rank_result(res, self.ds.attr_rank)

    def neighbors_at(self, rank: int, l: int) -> Tuple[int, ...]:
        """Decode the interval-compressed edges of one creation group."""
        tgt = self.edge_target[rank]
        mask = (
            (self.edge_group[rank] == rank)
            & (self.edge_llo[rank] <= l)
            & (l <= self.edge_lhi[rank])
        )
        return tuple(sorted(int(t) for t in tgt[mask]))


def build_segmented_edge_graph(ds: AttributedDataset, M: int, ef_construction: int,
                               prune: str = "keep-nearest", seed: int = 0,
                               keep_build_log: bool = True) -> SegmentedEdgeGraph:
    return SegmentedEdgeGraph(ds, M, ef_construction, prune=prune, seed=seed,
                              keep_build_log=keep_build_log).build()


# ---------------------------------------------------------------------------
# Shared subgraph construction (brute-force kNN + pruning per node)
# ---------------------------------------------------------------------------


def build_subgraph(vectors: np.ndarray, members: np.ndarray, M: int,
                   strategy: str = "rng", candidates: Optional[int] = None
                   ) -> Dict[int, np.ndarray]:
    """Pruned neighbor lists over a member subset, from exact in-subset
    nearest neighbors (blocked scan)."""
    members = np.asarray(members, dtype=np.int64)
    m = len(members)
    if m <= 1:
        return {int(r): np.empty(0, dtype=np.int64) for r in members}
    C = min(m - 1, candidates or max(2 * M, 32))
    sub = vectors[members]
    adjacency: Dict[int, np.ndarray] = {}
    for start in range(0, m, 1024):
        block = slice(start, min(start + 1024, m))
        D = pairwise_l2(sub[block], sub)
        rows = np.arange(block.stop - block.start)
        D[rows, rows + start] = np.inf
        # partial selection then exact ordering with id tie-break
        part = np.argpartition(D, C - 1, axis=1)[:, :C]
        for row, local in enumerate(rows):
            gpos = start + row
            cand_local = part[row]
            cand_d = D[row, cand_local]
            order = np.lexsort((members[cand_local], cand_d))
            cand_local = cand_local[order]
            cand_d = cand_d[order]
            kept_local = apply_prune(sub, cand_local, cand_d, M, strategy)
            adjacency[int(members[gpos])] = members[kept_local]
    return adjacency


# ---------------------------------------------------------------------------
# Segment tree over attribute ranks
# ---------------------------------------------------------------------------


@dataclass
class SegmentTreeNode:
    lo: int
    hi: int
    adjacency: Dict[int, np.ndarray]
    medoid: int
    left: Optional["SegmentTreeNode"] = None
    right: Optional["SegmentTreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def count_nodes(self) -> int:
        if self.is_leaf:
            return 1
        return 1 + self.left.count_nodes() + self.right.count_nodes()


@dataclass
class CoverEntry:
    node: SegmentTreeNode
    lo: int  # clipped interval actually served for the query
    hi: int


class SegmentTreeIndex:
    """Binary tree over attribute ranks; every node owns a pruned subgraph
    of exactly the points in its rank interval."""

    def __init__(self, ds: AttributedDataset, B: int = 64, M: int = 16,
                 ef_construction: int = 200, seed: int = 0):
        self.ds = ds
        self.B = B
        self.M = M
        self.ef_construction = ef_construction
        self.seed = seed
        self.n = ds.n
        self.rvecs = ds.vectors[ds.attr_rank]
        self.root: Optional[SegmentTreeNode] = None

    def build(self) -> "SegmentTreeIndex":
        self.root = self._build_node(0, self.n - 1)
        return self

    def _build_node(self, lo: int, hi: int) -> SegmentTreeNode:
        members = np.arange(lo, hi + 1, dtype=np.int64)
        adjacency = build_subgraph(self.rvecs, members, self.M)
        medoid = sampled_medoid(self.rvecs, members, seed=self.seed)
        node = SegmentTreeNode(lo, hi, adjacency, medoid)
        if hi - lo + 1 > self.B:
            mid = (lo + hi) // 2
            node.left = self._build_node(lo, mid)
            node.right = self._build_node(mid + 1, hi)
        return node

    def canonical_cover(self, l: int, u: int) -> List[CoverEntry]:
        """Minimal node set tiling [l, u]; at bucketed leaves the served
        interval is clipped so the tiling stays exact."""
        if not (0 <= l <= u < self.n):
            raise NoEntryError(f"invalid rank range ({l}, {u})")
        out: List[CoverEntry] = []

        def descend(node: SegmentTreeNode) -> None:
            if node.hi < l or node.lo > u:
                return
            if l <= node.lo and node.hi <= u:
                out.append(CoverEntry(node, node.lo, node.hi))
                return
            if node.is_leaf:
                out.append(CoverEntry(node, max(node.lo, l), min(node.hi, u)))
                return
            descend(node.left)
            descend(node.right)

        descend(self.root)
        return out

    def _range_accept(self, l: int, u: int) -> np.ndarray:
        accept = np.zeros(self.n, dtype=bool)
        accept[l : u + 1] = True
        return accept

    def search_merge(self, q: np.ndarray, rank_range: Tuple[int, int], ef: int,
                     k: int, ctx: Optional[DistanceContext] = None) -> SearchResult:
        """Independent beam search per cover subgraph, merged top-k."""
        l, u = rank_range
        cover = self.canonical_cover(l, u)
        ctx = self._ctx(ctx)
        accept = self._range_accept(l, u)
        pool: List[Tuple[float, int]] = []
        for entry in cover:
            res = beam_search(
                kernel.StaticAdjacency(_NodeAdj(entry.node)), [entry.node.medoid],
                q, ef, ef, ctx, accept=accept, expand_nonaccepted=True,
            )
            pool.extend(zip(res.distances, res.ids))
        pool.sort(key=lambda t: (t[0], t[1]))
        top = pool[:k]
        res = SearchResult(ids=[r for _, r in top], distances=[d for d, _ in top],
                           comparisons=ctx.count)
        return _rank_result(res, self.ds.attr_rank)

    def search_fused(self, q: np.ndarray, rank_range: Tuple[int, int], ef: int,
                     k: int, ctx: Optional[DistanceContext] = None) -> SearchResult:
        """Single beam over all cover subgraphs at once; each expansion uses
        the adjacency of the unique cover node owning that rank.

        The cover subgraphs share no edges, so a beam seeded at the raw
        medoids would tighten its bound before distant subgraphs finish
        navigating and would starve them. A cheap greedy descent inside
        each subgraph first moves every seed to a local optimum, then one
        shared beam refines across all of them."""
        l, u = rank_range
        cover = self.canonical_cover(l, u)
        ctx = self._ctx(ctx)
        accept = self._range_accept(l, u)
        qv = np.asarray(q, dtype=np.float32)
        entries = [_greedy_descent(entry.node, qv, ctx) for entry in cover]
        view = _FusedView(cover)
        res = beam_search(view, entries, q, ef, k, ctx,
                          accept=accept, expand_nonaccepted=True)
        return _rank_result(res, self.ds.attr_rank)

    def _ctx(self, ctx: Optional[DistanceContext]) -> DistanceContext:
        if ctx is None or ctx.vectors is not self.rvecs:
            return DistanceContext(self.rvecs)
        return ctx


class _NodeAdj:
    def __init__(self, node: SegmentTreeNode):
        self.node = node

    def __getitem__(self, r: int) -> np.ndarray:
        return self.node.adjacency[r]


def _greedy_descent(node: SegmentTreeNode, q: np.ndarray,
                    ctx: DistanceContext) -> int:
    """Walk from the node medoid to a local distance minimum."""
    cur = node.medoid
    cur_d = float(ctx.to_points(q, np.array([cur], dtype=np.int64))[0])
    seen = {cur}
    while True:
        nbrs = node.adjacency.get(cur)
        if nbrs is None or not len(nbrs):
            return cur
        fresh = np.array([x for x in nbrs if int(x) not in seen],
                         dtype=np.int64)
        if not len(fresh):
            return cur
        seen.update(int(x) for x in fresh)
        dists = ctx.to_points(q, fresh)
        j = int(np.argmin(dists))
        if dists[j] >= cur_d:
            return cur
        cur, cur_d = int(fresh[j]), float(dists[j])


class _FusedView:
    def __init__(self, cover: List[CoverEntry]):
        self.cover = sorted(cover, key=lambda e: e.node.lo)
        self.starts = [e.node.lo for e in self.cover]

    def neighbors(self, r: int) -> np.ndarray:
        j = bisect.bisect_right(self.starts, r) - 1
        entry = self.cover[j]
        return entry.node.adjacency.get(r, np.empty(0, dtype=np.int64))


def build_segment_tree(ds: AttributedDataset, B: int = 64, M: int = 16,
                       ef_construction: int = 200, seed: int = 0) -> SegmentTreeIndex:
    return SegmentTreeIndex(ds, B=B, M=M, ef_construction=ef_construction,
                            seed=seed).build()


# ---------------------------------------------------------------------------
# Segmented HNSW with threshold dispatch
# ---------------------------------------------------------------------------


class SegmentedHnsw:
    """S attribute-contiguous partitions; one pruned subgraph per contiguous
    segment range, which realizes per-edge segment-range validity masks.
    Query dispatch picks scan / joint / post-filter by exact selectivity."""

    def __init__(self, ds: AttributedDataset, S: int = 8, M: int = 16,
                 ef_construction: int = 200, sel_low: float = 0.005,
                 sel_high: float = 0.5, seed: int = 0):
        self.ds = ds
        self.S = S
        self.M = M
        self.ef_construction = ef_construction
        self.sel_low = sel_low
        self.sel_high = sel_high
        self.seed = seed
        self.n = ds.n
        self.rvecs = ds.vectors[ds.attr_rank]
        bounds = [(s * self.n) // S for s in range(S + 1)]
        self.segment_start = bounds  # segment s covers ranks [b[s], b[s+1])
        self.range_adjacency: Dict[Tuple[int, int], Dict[int, np.ndarray]] = {}
        self.range_medoid: Dict[Tuple[int, int], int] = {}

    def segment_of(self, rank: int) -> int:
        return bisect.bisect_right(self.segment_start, rank) - 1

    def range_ranks(self, a: int, b: int) -> np.ndarray:
        return np.arange(self.segment_start[a], self.segment_start[b + 1],
                         dtype=np.int64)

    def build(self) -> "SegmentedHnsw":
        for a in range(self.S):
            for b in range(a, self.S):
                members = self.range_ranks(a, b)
                if len(members) == 0:
                    continue
                self.range_adjacency[(a, b)] = build_subgraph(
                    self.rvecs, members, self.M
                )
                self.range_medoid[(a, b)] = sampled_medoid(
                    self.rvecs, members, seed=self.seed
                )
        return self

    def dispatch_mode(self, selectivity: float) -> str:
        if selectivity < self.sel_low:
            return "scan"
        if selectivity <= self.sel_high:
            return "joint"
        return "post"

    def search(self, q: np.ndarray, rank_range: Tuple[int, int], ef: int, k: int,
               ctx: Optional[DistanceContext] = None) -> SearchResult:
        l, u = rank_range
        if not (0 <= l <= u < self.n):
            raise NoEntryError(f"invalid rank range ({l}, {u})")
        if ctx is None or ctx.vectors is not self.rvecs:
            ctx = DistanceContext(self.rvecs)
        sel = (u - l + 1) / self.n
        mode = self.dispatch_mode(sel)
        q = np.asarray(q, dtype=np.float32)
        if mode == "scan":
            res = self._scan(q, l, u, k, ctx)
        elif mode == "joint":
            res = self._joint(q, l, u, ef, k, ctx)
        else:
            res = self._post(q, l, u, ef, k, ctx, sel)
        return _rank_result(res, self.ds.attr_rank)

    def _scan(self, q, l, u, k, ctx) -> SearchResult:
        ranks = np.arange(l, u + 1, dtype=np.int64)
        dists = ctx.to_points(q, ranks)
        order = np.lexsort((ranks, dists))[:k]
        return SearchResult(ids=[int(ranks[j]) for j in order],
                            distances=[float(dists[j]) for j in order],
                            comparisons=ctx.count)

    def _joint(self, q, l, u, ef, k, ctx) -> SearchResult:
        a = self.segment_of(l)
        b = self.segment_of(u)
        adj = self.range_adjacency[(a, b)]
        accept = np.zeros(self.n, dtype=bool)
        accept[l : u + 1] = True
        return beam_search(_DictView(adj), [self.range_medoid[(a, b)]], q, ef, k,
                           ctx, accept=accept, expand_nonaccepted=True)

    def _post(self, q, l, u, ef, k, ctx, sel) -> SearchResult:
        adj = self.range_adjacency[(0, self.S - 1)]
        entry = self.range_medoid[(0, self.S - 1)]
        k_over = min(10_000, self.n, math.ceil(k / sel))
        ef_try = max(ef, k_over)
        for _ in range(3):
            res = beam_search(_DictView(adj), [entry], q, ef_try, k_over, ctx)
            kept = [(d, r) for d, r in zip(res.distances, res.ids) if l <= r <= u]
            if len(kept) >= k:
                break
            ef_try *= 2
        top = kept[:k]
        out = SearchResult(ids=[r for _, r in top], distances=[d for d, _ in top],
                           comparisons=ctx.count)
        out.partial = len(top) < k
        return out

    def mask_edges(self):
        """Yield (segment range, source rank, target rank) for every
        annotated edge, for audits."""
        for rng, adj in self.range_adjacency.items():
            for src, targets in adj.items():
                for t in targets:
                    yield rng, int(src), int(t)


class _DictView:
    def __init__(self, adj: Dict[int, np.ndarray]):
        self.adj = adj

    def neighbors(self, u: int) -> np.ndarray:
        return self.adj.get(u, np.empty(0, dtype=np.int64))


def build_segmented_hnsw(ds: AttributedDataset, S: int = 8, M: int = 16,
                         ef_construction: int = 200, sel_low: float = 0.005,
                         sel_high: float = 0.5, seed: int = 0) -> SegmentedHnsw:
    return SegmentedHnsw(ds, S=S, M=M, ef_construction=ef_construction,
                         sel_low=sel_low, sel_high=sel_high, seed=seed).build()
