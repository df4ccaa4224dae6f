"""Exact filtered ground truth, recall, hardness metrics, and timed search."""
from __future__ import annotations

import hashlib
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import timing
from .baseline import kmeans, pairwise_l2
from .core import (
    AttributedDataset,
    DistanceContext,
    FilteredQuery,
    SearchResult,
    predicate_mask,
)


class UndefinedRecallError(ValueError):
    """Recall requested against an empty ground-truth entry."""


@dataclass
class GroundTruthEntry:
    ids: np.ndarray
    distances: np.ndarray
    short: bool = False  # fewer predicate matches than k


@dataclass
class GroundTruth:
    k: int
    entries: List[GroundTruthEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class HardnessReport:
    dis_ratio: float
    js_div: float
    estimator: str = "cluster-histogram-64"


def _truth_for(ds: AttributedDataset, q: FilteredQuery, k: int) -> GroundTruthEntry:
    if q.predicate is None:
        ids = np.arange(ds.n, dtype=np.int64)
    else:
        ids = np.where(predicate_mask(q.predicate, ds))[0]
    if len(ids) == 0:
        return GroundTruthEntry(ids=np.empty(0, dtype=np.int64),
                                distances=np.empty(0), short=True)
    qv = np.asarray(q.vector, dtype=np.float32)
    diff = ds.vectors[ids] - qv
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.lexsort((ids, dists))[:k]
    return GroundTruthEntry(ids=ids[order].astype(np.int64),
                            distances=dists[order].astype(np.float64),
                            short=len(ids) < k)


def ground_truth(ds: AttributedDataset, queries: Sequence[FilteredQuery],
                 k: int, workers: Optional[int] = None) -> GroundTruth:
    """Exact per-query linear scan over predicate-passing points."""
    if workers is None:
        workers = min(os.cpu_count() or 1, 8)
    if workers > 1 and len(queries) > 8:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda q: _truth_for(ds, q, k), queries))
    else:
        entries = [_truth_for(ds, q, k) for q in queries]
    return GroundTruth(k=k, entries=entries)


def recall_at_k(result: SearchResult, truth: GroundTruthEntry) -> float:
    if len(truth.ids) == 0:
        raise UndefinedRecallError("ground-truth entry is empty")
    got = set(result.ids)
    return sum(1 for i in truth.ids if int(i) in got) / len(truth.ids)


def mean_recall(results: Sequence[SearchResult], truth: GroundTruth) -> float:
    """Workload-mean recall; empty-truth queries are skipped."""
    vals = [recall_at_k(r, t) for r, t in zip(results, truth.entries)
            if len(t.ids)]
    return float(np.mean(vals)) if vals else 0.0


def sampled_mean_pairwise(vectors: np.ndarray, pairs: int = 10_000,
                          seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    n = len(vectors)
    a = rng.integers(0, n, pairs)
    b = rng.integers(0, n, pairs)
    return float(np.mean(np.linalg.norm(
        vectors[a].astype(np.float64) - vectors[b].astype(np.float64), axis=1)))


def dataset_hardness(ds: AttributedDataset, queries: Sequence[FilteredQuery],
                     truth: GroundTruth, clusters: int = 64,
                     pair_sample: int = 10_000, seed: int = 0) -> HardnessReport:
    """Distance ratio of the truth against the global spread, plus the
    divergence between full-dataset and queried-subset cluster histograms."""
    spread = sampled_mean_pairwise(ds.vectors, pairs=pair_sample, seed=seed)
    per_query = [float(np.mean(e.distances)) for e in truth.entries
                 if len(e.distances)]
    dis_ratio = float(np.mean(per_query)) / spread if per_query and spread > 0 \
        else 0.0

    clusters = min(clusters, ds.n)
    centroids = kmeans(ds.vectors, clusters, seed=seed)
    assign = np.argmin(pairwise_l2(ds.vectors, centroids), axis=1)
    sub = np.zeros(ds.n, dtype=bool)
    for q in queries:
        if q.predicate is None:
            sub[:] = True
            break
        sub |= predicate_mask(q.predicate, ds)
    full_hist = np.bincount(assign, minlength=clusters).astype(np.float64)
    sub_hist = np.bincount(assign[sub], minlength=clusters).astype(np.float64)
    # Laplace smoothing keeps empty cells off the log
    full_hist += 1.0
    sub_hist += 1.0
    p = full_hist / full_hist.sum()
    r = sub_hist / sub_hist.sum()
    m = 0.5 * (p + r)
    js = 0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(r * np.log(r / m))
    return HardnessReport(dis_ratio=dis_ratio, js_div=float(max(js, 0.0)))


def timed_search(search_fn: Callable[..., SearchResult], *args,
                 **kwargs) -> SearchResult:
    """Run any search with per-phase accounting attached to the result.

    Phases instrumented inside the graph kernel are measured directly;
    everything unattributed lands in "other" so the phases sum to the wall
    time of the call.
    """
    timer = timing.PhaseTimer()
    t0 = timing.now()
    with timing.use(timer):
        res = search_fn(*args, **kwargs)
    wall = timing.now() - t0
    measured = sum(timer.totals[p] for p in timing.PHASES if p != "other")
    timer.totals["other"] = max(wall - measured, 0.0)
    res.phase_times = dict(timer.totals)
    return res


# ---------------------------------------------------------------------------
# Ground-truth disk cache
# ---------------------------------------------------------------------------

_GT_MAGIC = b"FGTC"
_GT_VERSION = 1


def dataset_digest(ds: AttributedDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.vectors).tobytes())
    h.update(np.ascontiguousarray(ds.numeric_attrs).tobytes())
    for s in ds.labels:
        h.update(repr(sorted(s)).encode())
    return h.hexdigest()[:16]


def workload_digest(queries: Sequence[FilteredQuery]) -> str:
    h = hashlib.sha256()
    for q in queries:
        h.update(np.asarray(q.vector, dtype=np.float32).tobytes())
        h.update(repr(q.predicate).encode())
        h.update(struct.pack("<i", q.k))
    return h.hexdigest()[:16]


def ground_truth_cache_path(cache_dir: str, ds_digest: str, wl_digest: str,
                            k: int) -> str:
    return os.path.join(cache_dir, f"gt-{ds_digest}-{wl_digest}-k{k}.bin")


def save_ground_truth(path: str, truth: GroundTruth) -> None:
    with open(path, "wb") as f:
        f.write(_GT_MAGIC)
        f.write(struct.pack("<III", _GT_VERSION, truth.k, len(truth.entries)))
        for e in truth.entries:
            f.write(struct.pack("<IB", len(e.ids), int(e.short)))
            f.write(np.asarray(e.ids, dtype="<i8").tobytes())
            f.write(np.asarray(e.distances, dtype="<f8").tobytes())


def load_ground_truth(path: str) -> GroundTruth:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _GT_MAGIC:
            raise ValueError(f"not a ground-truth cache file: {path}")
        version, k, count = struct.unpack("<III", f.read(12))
        if version != _GT_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        entries = []
        for _ in range(count):
            m, short = struct.unpack("<IB", f.read(5))
            ids = np.frombuffer(f.read(8 * m), dtype="<i8").astype(np.int64)
            dists = np.frombuffer(f.read(8 * m), dtype="<f8").astype(np.float64)
            entries.append(GroundTruthEntry(ids=ids, distances=dists,
                                            short=bool(short)))
    return GroundTruth(k=k, entries=entries)


def cached_ground_truth(cache_dir: str, ds: AttributedDataset,
                        queries: Sequence[FilteredQuery], k: int) -> GroundTruth:
    """Compute ground truth, reusing a disk cache keyed by content digests."""
    os.makedirs(cache_dir, exist_ok=True)
    path = ground_truth_cache_path(cache_dir, dataset_digest(ds),
                                   workload_digest(queries), k)
    if os.path.exists(path):
        return load_ground_truth(path)
    truth = ground_truth(ds, queries, k)
    save_ground_truth(path, truth)
    return truth


def measure_qps(search_fn: Callable[[FilteredQuery], SearchResult],
                queries: Sequence[FilteredQuery]) -> float:
    """Single-threaded wall-clock queries per second over a workload."""
    t0 = time.perf_counter()
    for q in queries:
        search_fn(q)
    dt = time.perf_counter() - t0
    return len(queries) / dt if dt > 0 else float("inf")
