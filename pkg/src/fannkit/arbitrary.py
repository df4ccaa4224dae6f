"""Arbitrary-predicate filtering: compiled membership bitmaps, the
pre/post/joint strategy wrappers, the two-hop expansion index, and the
attribute-partitioned index."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .baseline import HnswIndex, IvfIndex, build_hnsw, build_ivf
from .core import (
    AttributedDataset,
    ConjunctionPredicate,
    DistanceContext,
    FilterPredicate,
    RangePredicate,
    SearchResult,
    predicate_mask,
)
from .kernel import beam_search


@dataclass
class MembershipBitmap:
    mask: np.ndarray
    matched_count: int

    @property
    def n(self) -> int:
        return len(self.mask)

    @property
    def selectivity(self) -> float:
        return self.matched_count / self.n if self.n else 0.0


def compile_predicate(pred: FilterPredicate, ds: AttributedDataset) -> MembershipBitmap:
    mask = predicate_mask(pred, ds)
    return MembershipBitmap(mask=mask, matched_count=int(mask.sum()))


def pre_filter_scan(ds: AttributedDataset, bitmap: MembershipBitmap,
                    q: np.ndarray, k: int,
                    ctx: Optional[DistanceContext] = None) -> SearchResult:
    """Exact scan over the matched ids only; this is the oracle path."""
    ctx = ctx or DistanceContext(ds.vectors)
    q = np.asarray(q, dtype=np.float32)
    ids = np.where(bitmap.mask)[0]
    if len(ids) == 0:
        return SearchResult(ids=[], distances=[], comparisons=ctx.count)
    dists = ctx.to_points(q, ids)
    order = np.lexsort((ids, dists))[:k]
    return SearchResult(ids=[int(ids[j]) for j in order],
                        distances=[float(dists[j]) for j in order],
                        comparisons=ctx.count)


def post_filter_search(index, bitmap: MembershipBitmap, q: np.ndarray,
                       ef: int, k: int,
                       ctx: Optional[DistanceContext] = None) -> SearchResult:
    """Unrestricted search oversampled by 1/selectivity, then drop
    non-members; doubles ef up to three times on shortfall."""
    ctx = ctx or DistanceContext(index.ds.vectors)
    if bitmap.matched_count == 0:
        return SearchResult(ids=[], distances=[], comparisons=ctx.count)
    k_over = min(bitmap.n, math.ceil(k / bitmap.selectivity))
    ef_try = max(ef, k_over)
    kept: List[Tuple[float, int]] = []
    for _ in range(3):
        res = index.search(q, ef_try, k_over, ctx=ctx)
        kept = [(d, i) for d, i in zip(res.distances, res.ids) if bitmap.mask[i]]
        if len(kept) >= k:
            break
        ef_try *= 2
    top = kept[:k]
    out = SearchResult(ids=[i for _, i in top], distances=[d for d, _ in top],
                       comparisons=ctx.count)
    out.partial = len(top) < min(k, bitmap.matched_count)
    return out


def joint_filter_search(index, bitmap: MembershipBitmap, q: np.ndarray,
                        ef: int, k: int, ctx: Optional[DistanceContext] = None,
                        expand_nonmembers: bool = False) -> SearchResult:
    """Beam search where only members enter the result list."""
    ctx = ctx or DistanceContext(index.ds.vectors)
    return index.search(q, ef, k, ctx=ctx, accept=bitmap.mask,
                        expand_nonaccepted=expand_nonmembers)


# ---------------------------------------------------------------------------
# Two-hop expansion index
# ---------------------------------------------------------------------------


class _TwoHopView:
    """One-hop member neighbors, widened with two-hop neighbors reached
    through non-member one-hops when member one-hops fall below tau."""

    def __init__(self, adj: Dict[int, np.ndarray], mask: np.ndarray, tau: int):
        self.adj = adj
        self.mask = mask
        self.tau = tau
        self._empty = np.empty(0, dtype=np.int64)

    def neighbors(self, u: int) -> np.ndarray:
        nbrs = self.adj.get(u, self._empty)
        if len(nbrs) == 0:
            return nbrs
        member = self.mask[nbrs]
        out = nbrs[member]
        if int(member.sum()) < self.tau:
            hops = [self.adj.get(int(v), self._empty) for v in nbrs[~member]]
            if hops:
                two = np.concatenate(hops)
                if len(two):
                    out = np.unique(np.concatenate([out, two[self.mask[two]]]))
        return out


class AcornIndex:
    """Predicate-agnostic multi-layer graph built with two-hop pruning."""

    def __init__(self, hnsw: HnswIndex, tau: int):
        self.hnsw = hnsw
        self.ds = hnsw.ds
        self.tau = tau

    def search(self, q: np.ndarray, bitmap: MembershipBitmap, ef: int, k: int,
               ctx: Optional[DistanceContext] = None) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        entries = self.hnsw.descend(q, ctx)
        view = _TwoHopView(self.hnsw.layers[0], bitmap.mask, self.tau)
        return beam_search(view, entries, q, ef, k, ctx,
                           accept=bitmap.mask, expand_nonaccepted=True)


def build_acorn(ds: AttributedDataset, M: int, ef_construction: int,
                tau: Optional[int] = None, seed: int = 0) -> AcornIndex:
    tau = tau if tau is not None else max(M // 2, 1)
    hnsw = build_hnsw(ds, M, ef_construction, prune="two-hop", seed=seed)
    return AcornIndex(hnsw, tau)


# ---------------------------------------------------------------------------
# Attribute-partitioned index
# ---------------------------------------------------------------------------


def predicate_attr_bounds(pred: FilterPredicate) -> Optional[Tuple[int, int]]:
    """Numeric-attribute bounds implied by a predicate, if any."""
    if isinstance(pred, RangePredicate):
        return pred.lo, pred.hi
    if isinstance(pred, ConjunctionPredicate):
        bounds = [b for b in (predicate_attr_bounds(p) for p in pred.parts) if b]
        if bounds:
            return max(b[0] for b in bounds), min(b[1] for b in bounds)
    return None


class PartitionedIndex:
    """Equal-count attribute partitions, each owning its own sub-index;
    low in-partition selectivity falls back to a direct scan."""

    def __init__(self, ds: AttributedDataset, P: int, kind: str,
                 scan_threshold: float, M: int, ef_construction: int,
                 nlist: int, seed: int):
        self.ds = ds
        self.P = P
        self.kind = kind
        self.scan_threshold = scan_threshold
        self.partitions: List[np.ndarray] = []
        self.bounds: List[Tuple[int, int]] = []
        self.sub_indexes: List = []
        order = ds.attr_rank
        for p in range(P):
            ids = order[(p * ds.n) // P : ((p + 1) * ds.n) // P]
            ids = np.sort(ids).astype(np.int64)
            self.partitions.append(ids)
            attrs = ds.numeric_attrs[ids]
            self.bounds.append((int(attrs.min()), int(attrs.max())))
            subds = AttributedDataset(ds.vectors[ids])
            if kind == "hnsw":
                self.sub_indexes.append(build_hnsw(subds, M, ef_construction,
                                                   seed=seed))
            elif kind == "ivf":
                self.sub_indexes.append(build_ivf(subds, min(nlist, len(ids)),
                                                  seed=seed))
            else:
                raise ValueError(f"unknown partition sub-index kind: {kind}")

    def select_partitions(self, pred: FilterPredicate) -> List[int]:
        b = predicate_attr_bounds(pred)
        if b is None:
            return list(range(self.P))
        lo, hi = b
        return [p for p, (plo, phi) in enumerate(self.bounds)
                if not (hi < plo or lo > phi)]

    def search(self, q: np.ndarray, pred: FilterPredicate,
               bitmap: MembershipBitmap, ef: int, k: int,
               ctx: Optional[DistanceContext] = None) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        q = np.asarray(q, dtype=np.float32)
        best: List[Tuple[float, int]] = []
        for p in self.select_partitions(pred):
            ids = self.partitions[p]
            local_mask = bitmap.mask[ids]
            matched = int(local_mask.sum())
            if matched == 0:
                continue
            if matched < self.scan_threshold * len(ids):
                scan_ids = ids[local_mask]
                dists = ctx.to_points(q, scan_ids)
                pairs = zip(dists, scan_ids)
            else:
                sub = self.sub_indexes[p]
                subctx = DistanceContext(sub.ds.vectors)
                if self.kind == "hnsw":
                    res = sub.search(q, max(ef, k), k, ctx=subctx,
                                     accept=local_mask, expand_nonaccepted=True)
                else:
                    res = sub.search(q, sub.nlist, k, ctx=subctx,
                                     accept=local_mask)
                ctx.count += subctx.count
                pairs = zip(res.distances, (ids[i] for i in res.ids))
            for d, i in pairs:
                heapq.heappush(best, (-float(d), -int(i)))
                if len(best) > k:
                    heapq.heappop(best)
        ordered = sorted((-nd, -ni) for nd, ni in best)
        return SearchResult(ids=[i for _, i in ordered],
                            distances=[d for d, _ in ordered],
                            comparisons=ctx.count)


def build_partitioned(ds: AttributedDataset, P: int = 64, kind: str = "hnsw",
                      scan_threshold: float = 0.1, M: int = 16,
                      ef_construction: int = 100, nlist: int = 32,
                      seed: int = 0) -> PartitionedIndex:
    return PartitionedIndex(ds, P, kind, scan_threshold, M, ef_construction,
                            nlist, seed)
