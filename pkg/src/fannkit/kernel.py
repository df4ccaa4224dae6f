"""Shared graph-search kernel: beam search, pruning rules, entry points."""
from __future__ import annotations

import heapq
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from . import timing
from .core import AttributedDataset, DistanceContext, SearchResult


class NoEntryError(ValueError):
    """Search started with no usable entry point."""


class PruneCandidate(NamedTuple):
    id: int
    dist: float


class StaticAdjacency:
    """Adjacency view over a plain list of neighbor-id arrays."""

    def __init__(self, lists: Sequence[np.ndarray]):
        self.lists = lists

    def neighbors(self, u: int) -> np.ndarray:
        return self.lists[u]


def beam_search(
    view,
    entries: Iterable[int],
    q: np.ndarray,
    ef: int,
    k: int,
    ctx: DistanceContext,
    accept: Optional[np.ndarray] = None,
    expand_nonaccepted: bool = False,
) -> SearchResult:
    """Greedy best-first expansion with a bounded result heap.

    ``accept`` restricts which nodes may enter the result list; whether a
    rejected node may still be used as a routing hop is controlled by
    ``expand_nonaccepted``.  Stops once the best unexpanded candidate is
    farther than the worst of the full result heap.
    """
    if ef < k:
        raise ValueError("ef must be >= k")
    q = np.asarray(q, dtype=np.float32)
    entry_ids = np.array(list(dict.fromkeys(int(e) for e in entries)), dtype=np.int64)
    if len(entry_ids) == 0:
        raise NoEntryError("beam search requires at least one entry point")

    timer = timing.active()
    n = len(ctx.vectors)
    visited = np.zeros(n, dtype=bool)
    visited[entry_ids] = True
    if timer is not None:
        t0 = timing.now()
        entry_dists = ctx.to_points(q, entry_ids)
        timer.add("distance_compute", timing.now() - t0)
    else:
        entry_dists = ctx.to_points(q, entry_ids)

    # candidates: min-heap on (dist, id); results: max-heap via (-dist, -id)
    # so that distance ties evict the larger id first.
    candidates: List = []
    results: List = []
    for d, i in zip(entry_dists, entry_ids):
        d = float(d)
        i = int(i)
        heapq.heappush(candidates, (d, i))
        if accept is None or accept[i]:
            heapq.heappush(results, (-d, -i))
            if len(results) > ef:
                heapq.heappop(results)

    while candidates:
        d, u = heapq.heappop(candidates)
        if len(results) >= ef and d > -results[0][0]:
            break
        if accept is not None and not expand_nonaccepted and not accept[u]:
            continue
        t0 = timing.now() if timer is not None else 0.0
        nbrs = np.asarray(view.neighbors(u))
        if len(nbrs):
            nbrs = nbrs[~visited[nbrs]]
        if timer is not None:
            timer.add("edge_filtering", timing.now() - t0)
        if len(nbrs) == 0:
            continue
        visited[nbrs] = True
        if timer is not None:
            t0 = timing.now()
            nd = ctx.to_points(q, nbrs)
            timer.add("distance_compute", timing.now() - t0)
        else:
            nd = ctx.to_points(q, nbrs)
        full = len(results) >= ef
        bound = -results[0][0] if full else np.inf
        if full:
            keep = nd < bound
            nd, nbrs = nd[keep], nbrs[keep]
        if timer is not None:
            t0 = timing.now()
        for dv, nb in zip(nd, nbrs):
            dv = float(dv)
            nb = int(nb)
            if dv >= bound and full:
                continue
            acceptable = accept is None or accept[nb]
            if acceptable or expand_nonaccepted:
                heapq.heappush(candidates, (dv, nb))
            if acceptable:
                heapq.heappush(results, (-dv, -nb))
                if len(results) > ef:
                    heapq.heappop(results)
                full = len(results) >= ef
                if full:
                    bound = -results[0][0]
        if timer is not None:
            timer.add("heap_maintenance", timing.now() - t0)

    ordered = sorted((-nd, -ni) for nd, ni in results)
    top = ordered[:k]
    return SearchResult(
        ids=[i for _, i in top],
        distances=[d for d, _ in top],
        comparisons=ctx.count,
    )


def prune_rng(
    cands: Sequence[PruneCandidate],
    M: int,
    dist: Callable[[int, int], float],
    alpha: float = 1.0,
) -> List[int]:
    """Relative-neighbor pruning: drop a candidate when a kept neighbor is
    strictly closer to it than the owner is (relaxed by ``alpha``)."""
    kept: List[PruneCandidate] = []
    for c in cands:
        if len(kept) >= M:
            break
        if all(alpha * dist(u.id, c.id) >= c.dist for u in kept):
            kept.append(c)
    return [c.id for c in kept]


def prune_two_hop(
    cands: Sequence[PruneCandidate],
    M: int,
    neighbors_of: Callable[[int], Iterable[int]],
) -> List[int]:
    """Keep a candidate unless it is already a one-hop neighbor of a kept
    candidate (hence two-hop reachable from the owner); distances between
    candidates play no role."""
    kept: List[int] = []
    blocked: set = set()
    for c in cands:
        if len(kept) >= M:
            break
        if c.id in blocked:
            continue
        kept.append(c.id)
        blocked.update(int(x) for x in neighbors_of(c.id))
    return kept


def prune_label_covered(
    cands: Sequence[PruneCandidate],
    M: int,
    dist: Callable[[int, int], float],
    label_of: Callable[[int], frozenset],
    owner_labels: frozenset,
) -> List[int]:
    """RNG pruning gated on label coverage: a kept neighbor blocks a
    candidate only when its label set covers owner's and candidate's."""
    kept: List[PruneCandidate] = []
    for c in cands:
        if len(kept) >= M:
            break
        c_labels = label_of(c.id)
        union = owner_labels | c_labels
        blockedby = any(
            dist(u.id, c.id) < c.dist and label_of(u.id) >= union for u in kept
        )
        if not blockedby:
            kept.append(c)
    return [c.id for c in kept]


def prune_keep_nearest(cands: Sequence[PruneCandidate], M: int) -> List[int]:
    return [c.id for c in cands[:M]]


def select_entry_points_even(
    ds: AttributedDataset, lo_rank: int, hi_rank: int, count: int
) -> List[int]:
    """Ids at evenly spaced ranks inside [lo_rank, hi_rank], deduplicated."""
    if lo_rank > hi_rank:
        raise NoEntryError("empty rank range")
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        ranks = [(lo_rank + hi_rank) // 2]
    else:
        span = hi_rank - lo_rank
        ranks = [lo_rank + (j * span) // (count - 1) for j in range(count)]
    seen = dict.fromkeys(ranks)
    return [int(ds.attr_rank[r]) for r in seen]
