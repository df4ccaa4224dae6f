"""Baseline ANN indexes: HNSW, Vamana, exact kNN graph, IVF-Flat and IVF-PQ."""
from __future__ import annotations

import heapq
import math
import warnings
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import kernel
from .core import AttributedDataset, DistanceContext, SearchResult
from .kernel import PruneCandidate, beam_search


class ConfigError(ValueError):
    pass


def pairwise_l2(A: np.ndarray, B: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense distance matrix between the rows of A and B."""
    A = np.asarray(A, dtype=np.float32)
    B = A if B is None else np.asarray(B, dtype=np.float32)
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.sqrt(np.clip(sq, 0.0, None))


def sampled_medoid(
    vectors: np.ndarray, ids: Optional[np.ndarray] = None, sample: int = 256, seed: int = 0
) -> int:
    """Id minimizing the summed distance to a seeded reference sample."""
    if ids is None:
        ids = np.arange(len(vectors))
    ids = np.asarray(ids)
    rng = np.random.default_rng(seed)
    ref = ids[rng.choice(len(ids), size=min(sample, len(ids)), replace=False)]
    sums = np.zeros(len(ids))
    for start in range(0, len(ids), 2048):
        block = ids[start : start + 2048]
        sums[start : start + len(block)] = pairwise_l2(
            vectors[block], vectors[ref]
        ).sum(axis=1)
    best = int(np.lexsort((ids, sums))[0])
    return int(ids[best])


def apply_prune(
    vectors: np.ndarray,
    cand_ids: Sequence[int],
    cand_dists: Sequence[float],
    M: int,
    strategy: str = "rng",
    alpha: float = 1.0,
    neighbors_of: Optional[Callable[[int], Sequence[int]]] = None,
    label_of: Optional[Callable[[int], frozenset]] = None,
    owner_labels: Optional[frozenset] = None,
) -> List[int]:
    """Dispatch one of the pruning rules over a distance-sorted candidate list.

    Candidate-to-candidate distances are computed once as a dense block so the
    pruning rules themselves stay scalar.
    """
    order = np.lexsort((cand_ids, cand_dists))
    cands = [PruneCandidate(int(cand_ids[i]), float(cand_dists[i])) for i in order]
    if strategy == "keep-nearest":
        return kernel.prune_keep_nearest(cands, M)
    if strategy == "two-hop":
        if neighbors_of is None:
            raise ConfigError("two-hop pruning needs the adjacency state")
        return kernel.prune_two_hop(cands, M, neighbors_of)
    ids = np.array([c.id for c in cands])
    D = pairwise_l2(vectors[ids])
    pos = {int(i): j for j, i in enumerate(ids)}
    dist = lambda a, b: float(D[pos[a], pos[b]])
    if strategy == "rng":
        return kernel.prune_rng(cands, M, dist, alpha=alpha)
    if strategy == "label-covered":
        if label_of is None or owner_labels is None:
            raise ConfigError("label-covered pruning needs label sets")
        return kernel.prune_label_covered(cands, M, dist, label_of, owner_labels)
    raise ConfigError(f"unknown pruning strategy: {strategy}")


class _DictAdjacency:
    def __init__(self, adj: Dict[int, np.ndarray]):
        self.adj = adj

    def neighbors(self, u: int) -> np.ndarray:
        return self.adj.get(u, _EMPTY_IDS)


_EMPTY_IDS = np.empty(0, dtype=np.int64)


class HnswIndex:
    """Multi-layer navigable small-world graph with pluggable pruning."""

    def __init__(self, ds: AttributedDataset, M: int, ef_construction: int,
                 prune: str = "rng", seed: int = 0):
        self.ds = ds
        self.M = M
        self.ef_construction = ef_construction
        self.prune = prune
        self.seed = seed
        self.layers: List[Dict[int, np.ndarray]] = []
        self.level_of = np.zeros(ds.n, dtype=np.int32)
        self.entry_point = -1
        self.max_level = -1

    # -- construction ------------------------------------------------------

    def _assign_levels(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        mL = 1.0 / math.log(self.M) if self.M > 1 else 1.0
        u = rng.random(self.ds.n)
        return np.floor(-np.log(u) * mL).astype(np.int32)

    def _shrink(self, layer: int, node: int, cap: int) -> None:
        adj = self.layers[layer]
        ids = adj[node]
        if len(ids) <= cap:
            return
        dists = np.linalg.norm(self.ds.vectors[ids] - self.ds.vectors[node], axis=1)
        kept = apply_prune(
            self.ds.vectors, ids, dists, cap, self.prune,
            neighbors_of=lambda u: adj.get(u, ()),
        )
        adj[node] = np.array(kept, dtype=np.int64)

    def build(self) -> "HnswIndex":
        n = self.ds.n
        if n == 0:
            return self
        self.level_of = self._assign_levels()
        top = int(self.level_of.max())
        self.layers = [dict() for _ in range(top + 1)]
        self.entry_point = 0
        self.max_level = int(self.level_of[0])
        for lvl in range(self.max_level + 1):
            self.layers[lvl][0] = _EMPTY_IDS
        ctx = DistanceContext(self.ds.vectors)
        for i in range(1, n):
            self._insert(i, ctx)
        return self

    def _insert(self, i: int, ctx: DistanceContext) -> None:
        level = int(self.level_of[i])
        q = self.ds.vectors[i]
        ep = [self.entry_point]
        for lvl in range(self.max_level, level, -1):
            res = beam_search(_DictAdjacency(self.layers[lvl]), ep, q, 1, 1, ctx)
            ep = res.ids or ep
        for lvl in range(min(level, self.max_level), -1, -1):
            adj = self.layers[lvl]
            res = beam_search(
                _DictAdjacency(adj), ep, q, self.ef_construction,
                self.ef_construction, ctx,
            )
            kept = apply_prune(
                self.ds.vectors, res.ids, res.distances, self.M, self.prune,
                neighbors_of=lambda u: adj.get(u, ()),
            )
            adj[i] = np.array(kept, dtype=np.int64)
            cap = 2 * self.M if lvl == 0 else self.M
            for t in kept:
                adj[t] = np.append(adj.get(t, _EMPTY_IDS), i)
                if len(adj[t]) > cap:
                    self._shrink(lvl, t, cap)
            ep = res.ids or ep
        if level > self.max_level:
            for lvl in range(self.max_level + 1, level + 1):
                self.layers[lvl][i] = _EMPTY_IDS
            self.max_level = level
            self.entry_point = i

    # -- search ------------------------------------------------------------

    def descend(self, q: np.ndarray, ctx: DistanceContext) -> List[int]:
        """Greedy route through the upper layers down to layer 0 entries."""
        ep = [self.entry_point]
        for lvl in range(self.max_level, 0, -1):
            res = beam_search(_DictAdjacency(self.layers[lvl]), ep, q, 1, 1, ctx)
            ep = res.ids or ep
        return ep

    def search(
        self,
        q: np.ndarray,
        ef: int,
        k: int,
        ctx: Optional[DistanceContext] = None,
        accept: Optional[np.ndarray] = None,
        expand_nonaccepted: bool = False,
        entries: Optional[Sequence[int]] = None,
    ) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        if entries is None:
            entries = self.descend(q, ctx)
        return beam_search(
            _DictAdjacency(self.layers[0]), entries, q, ef, k, ctx,
            accept=accept, expand_nonaccepted=expand_nonaccepted,
        )

    def layer0_view(self) -> _DictAdjacency:
        return _DictAdjacency(self.layers[0])


def build_hnsw(ds: AttributedDataset, M: int, ef_construction: int,
               prune: str = "rng", seed: int = 0) -> HnswIndex:
    return HnswIndex(ds, M, ef_construction, prune=prune, seed=seed).build()


class VamanaIndex:
    def __init__(self, ds: AttributedDataset, M: int, adjacency: Dict[int, np.ndarray],
                 medoid: int, alpha: float):
        self.ds = ds
        self.M = M
        self.adjacency = adjacency
        self.medoid = medoid
        self.alpha = alpha

    def search(self, q, ef: int, k: int, ctx: Optional[DistanceContext] = None,
               accept=None, expand_nonaccepted: bool = False,
               entries: Optional[Sequence[int]] = None) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        if entries is None:
            entries = [self.medoid]
        return beam_search(_DictAdjacency(self.adjacency), entries, q, ef, k, ctx,
                           accept=accept, expand_nonaccepted=expand_nonaccepted)

    def connected_from_medoid(self) -> bool:
        seen = {self.medoid}
        stack = [self.medoid]
        while stack:
            u = stack.pop()
            for v in self.adjacency.get(u, ()):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.ds.n


def build_vamana(ds: AttributedDataset, M: int, ef_construction: int,
                 alpha: float = 1.2, seed: int = 0) -> VamanaIndex:
    n = ds.n
    rng = np.random.default_rng(seed)
    adjacency: Dict[int, np.ndarray] = {}
    R = min(M, max(n - 1, 0))
    for i in range(n):
        if R == 0:
            adjacency[i] = _EMPTY_IDS.copy()
            continue
        picks = rng.choice(n - 1, size=R, replace=False)
        picks = np.where(picks >= i, picks + 1, picks)
        adjacency[i] = picks.astype(np.int64)
    medoid = sampled_medoid(ds.vectors, seed=seed) if n else 0
    ctx = DistanceContext(ds.vectors)
    # two passes over a random permutation; the first pass wires a rough
    # graph, the second re-searches it and repairs nodes the medoid could
    # not yet reach
    for first_pass in (True, False):
        pass_alpha = 1.0 if first_pass else alpha
        for i in rng.permutation(n):
            i = int(i)
            res = beam_search(_DictAdjacency(adjacency), [medoid], ds.vectors[i],
                              ef_construction, ef_construction, ctx)
            cand_ids = [c for c in res.ids if c != i]
            cand_dists = [d for c, d in zip(res.ids, res.distances) if c != i]
            kept = apply_prune(ds.vectors, cand_ids, cand_dists, M, "rng",
                               alpha=pass_alpha)
            adjacency[i] = np.array(kept, dtype=np.int64)
            for t in kept:
                if i in adjacency[t]:
                    continue
                adjacency[t] = np.append(adjacency[t], i)
                if len(adjacency[t]) > M:
                    ids = adjacency[t]
                    dists = np.linalg.norm(ds.vectors[ids] - ds.vectors[t], axis=1)
                    adjacency[t] = np.array(
                        apply_prune(ds.vectors, ids, dists, M, "rng",
                                    alpha=pass_alpha),
                        dtype=np.int64,
                    )
    _repair_reachability(ds.vectors, adjacency, medoid, M)
    return VamanaIndex(ds, M, adjacency, medoid, alpha)


def _repair_reachability(vectors: np.ndarray, adjacency: Dict[int, np.ndarray],
                         medoid: int, M: int) -> None:
    """Attach any node the medoid cannot reach: bridge from the closest
    reachable node, preferring one with spare degree.  A bridge that must
    evict an existing edge is validated so the eviction cannot strand
    previously reachable nodes."""
    n = len(adjacency)

    def bfs() -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        seen[medoid] = True
        stack = [medoid]
        while stack:
            u = stack.pop()
            nbrs = adjacency[u]
            fresh = nbrs[~seen[nbrs]] if len(nbrs) else nbrs
            seen[fresh] = True
            stack.extend(int(v) for v in fresh)
        return seen

    for _ in range(n):
        seen = bfs()
        if seen.all():
            return
        reached = int(seen.sum())
        inside = np.where(seen)[0]
        outside = np.where(~seen)[0]
        D = pairwise_l2(vectors[outside], vectors[inside])
        room = np.array([len(adjacency[int(u)]) < M for u in inside])
        if room.any():
            D = D[:, room]
            inside = inside[room]
        order = np.argsort(D, axis=None, kind="stable")
        committed = False
        for flat in order[: 4 * M]:
            r, c = np.unravel_index(flat, D.shape)
            src, dst = int(inside[c]), int(outside[r])
            old = adjacency[src]
            nbrs = np.append(old, dst)
            if len(nbrs) <= M:
                adjacency[src] = nbrs.astype(np.int64)
                committed = True
                break
            dists = np.linalg.norm(vectors[nbrs] - vectors[src], axis=1)
            dists[-1] = -1.0
            for drop in np.argsort(-dists, kind="stable"):
                trial = np.delete(nbrs, int(drop))
                adjacency[src] = trial.astype(np.int64)
                if int(bfs().sum()) > reached:
                    committed = True
                    break
                adjacency[src] = old
            if committed:
                break
        if not committed:
            # no safe bridge found near the frontier; leave the graph as is
            return


def build_knn_graph(ds: AttributedDataset, K: int) -> Dict[int, np.ndarray]:
    """Exact K-nearest-neighbor adjacency via a blocked full scan."""
    if K >= ds.n:
        raise ConfigError("K must be < n")
    n = ds.n
    adjacency: Dict[int, np.ndarray] = {}
    ids = np.arange(n)
    for start in range(0, n, 1024):
        block = ids[start : start + 1024]
        D = pairwise_l2(ds.vectors[block], ds.vectors)
        D[np.arange(len(block)), block] = np.inf
        for row, i in enumerate(block):
            order = np.lexsort((ids, D[row]))
            adjacency[int(i)] = order[:K].astype(np.int64)
    return adjacency


def kmeans(X: np.ndarray, k: int, iters: int = 20, seed: int = 0) -> np.ndarray:
    """Lloyd iterations with k-means++ style seeding from a fixed RNG."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float32)
    n = len(X)
    centroids = np.empty((k, X.shape[1]), dtype=np.float32)
    centroids[0] = X[rng.integers(n)]
    closest = pairwise_l2(X, centroids[:1])[:, 0] ** 2
    for j in range(1, k):
        probs = closest / closest.sum() if closest.sum() > 0 else None
        centroids[j] = X[rng.choice(n, p=probs)]
        closest = np.minimum(closest, pairwise_l2(X, centroids[j : j + 1])[:, 0] ** 2)
    for _ in range(iters):
        assign = np.argmin(pairwise_l2(X, centroids), axis=1)
        for j in range(k):
            members = X[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                centroids[j] = X[rng.integers(n)]
    return centroids


class PqCodec:
    """Product quantizer: per-subspace codebooks plus 8-bit codes."""

    def __init__(self, m: int, ksub: int, codebooks: np.ndarray, codes: np.ndarray):
        if ksub > 256:
            raise ConfigError("ksub must fit in one byte")
        self.m = m
        self.ksub = ksub
        self.codebooks = codebooks  # (m, ksub, dsub)
        self.codes = codes  # (n, m) uint8
        self.dsub = codebooks.shape[2]

    @classmethod
    def train(cls, ds: AttributedDataset, m: int, ksub: int, seed: int = 0) -> "PqCodec":
        d = ds.dim
        if d % m != 0:
            raise ConfigError(f"dimension {d} not divisible by m={m}")
        dsub = d // m
        codebooks = np.empty((m, ksub, dsub), dtype=np.float32)
        codes = np.empty((ds.n, m), dtype=np.uint8)
        for j in range(m):
            sub = ds.vectors[:, j * dsub : (j + 1) * dsub]
            codebooks[j] = kmeans(sub, ksub, seed=seed + j)
            codes[:, j] = np.argmin(pairwise_l2(sub, codebooks[j]), axis=1)
        return cls(m, ksub, codebooks, codes)

    def encode(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float32)
        code = np.empty(self.m, dtype=np.uint8)
        for j in range(self.m):
            sub = v[j * self.dsub : (j + 1) * self.dsub]
            code[j] = np.argmin(np.linalg.norm(self.codebooks[j] - sub, axis=1))
        return code

    def decode(self, code: np.ndarray) -> np.ndarray:
        return np.concatenate([self.codebooks[j, code[j]] for j in range(self.m)])

    def adc_table(self, q: np.ndarray) -> np.ndarray:
        """Per-subspace squared distances from q to every codebook centroid."""
        q = np.asarray(q, dtype=np.float32)
        table = np.empty((self.m, self.ksub), dtype=np.float32)
        for j in range(self.m):
            sub = q[j * self.dsub : (j + 1) * self.dsub]
            diff = self.codebooks[j] - sub
            table[j] = np.einsum("ij,ij->i", diff, diff)
        return table

    def adc_distance(self, q: np.ndarray, code: np.ndarray) -> float:
        table = self.adc_table(q)
        return float(np.sqrt(sum(table[j, code[j]] for j in range(self.m))))

    def adc_distances(self, q: np.ndarray, ids: np.ndarray) -> np.ndarray:
        table = self.adc_table(q)
        sq = table[np.arange(self.m)[None, :], self.codes[ids]].sum(axis=1)
        return np.sqrt(sq)


def pq_train(ds: AttributedDataset, m: int, ksub: int, seed: int = 0) -> PqCodec:
    return PqCodec.train(ds, m, ksub, seed=seed)


class IvfIndex:
    """Inverted-file index: k-means partitions with optional PQ codes."""

    def __init__(self, ds: AttributedDataset, centroids: np.ndarray,
                 postings: List[np.ndarray], pq: Optional[PqCodec], seed: int):
        self.ds = ds
        self.centroids = centroids
        self.postings = postings
        self.pq = pq
        self.seed = seed
        self.nlist = len(postings)

    def search(self, q: np.ndarray, nprobe: int, k: int,
               ctx: Optional[DistanceContext] = None,
               accept: Optional[np.ndarray] = None) -> SearchResult:
        ctx = ctx or DistanceContext(self.ds.vectors)
        q = np.asarray(q, dtype=np.float32)
        if nprobe > self.nlist:
            warnings.warn(f"nprobe={nprobe} clamped to nlist={self.nlist}")
            nprobe = self.nlist
        # Centroid probing is index navigation, not charged as comparisons.
        cd = np.linalg.norm(self.centroids - q, axis=1)
        probe = np.argsort(cd, kind="stable")[:nprobe]
        best: List = []
        for c in probe:
            ids = self.postings[c]
            if accept is not None and len(ids):
                ids = ids[accept[ids]]
            if len(ids) == 0:
                continue
            if self.pq is not None:
                ctx.count += len(ids)
                dists = self.pq.adc_distances(q, ids)
            else:
                dists = ctx.to_points(q, ids)
            for d, i in zip(dists, ids):
                heapq.heappush(best, (-float(d), -int(i)))
                if len(best) > k:
                    heapq.heappop(best)
        ordered = sorted((-nd, -ni) for nd, ni in best)
        return SearchResult(ids=[i for _, i in ordered],
                            distances=[d for d, _ in ordered],
                            comparisons=ctx.count)


def build_ivf(ds: AttributedDataset, nlist: int, pq: Optional[PqCodec] = None,
              seed: int = 0) -> IvfIndex:
    if nlist > ds.n:
        raise ConfigError("nlist must be <= n")
    centroids = kmeans(ds.vectors, nlist, seed=seed)
    assign = np.argmin(pairwise_l2(ds.vectors, centroids), axis=1)
    postings = [np.where(assign == j)[0].astype(np.int64) for j in range(nlist)]
    return IvfIndex(ds, centroids, postings, pq, seed)
