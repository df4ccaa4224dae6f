"""Workload generation, vector file IO, ef tuning, and the benchmark runner."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import arbitrary, baseline, labelindex, rangeindex
from .core import (
    AttributedDataset,
    DistanceContext,
    FilteredQuery,
    LabelPredicate,
    RangePredicate,
    SearchResult,
)
from .evaluate import GroundTruth, ground_truth, measure_qps, recall_at_k


class VecFormatError(ValueError):
    """Malformed vector file; carries the byte offset of the violation."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


_VEC_KINDS: Dict[str, Tuple[str, int]] = {
    "f32": ("<f4", 4),
    "i32": ("<i4", 4),
    "u8": ("<u1", 1),
}


def read_vecs(path: str, kind: str = "f32") -> np.ndarray:
    """Read records of [int32 dim][dim values]; all records must agree on dim."""
    if kind not in _VEC_KINDS:
        raise ValueError(f"unknown vector kind: {kind}")
    dtype, esize = _VEC_KINDS[kind]
    with open(path, "rb") as f:
        data = f.read()
    if len(data) == 0:
        return np.empty((0, 0), dtype=dtype)
    if len(data) < 4:
        raise VecFormatError("truncated dimension header", 0)
    d = struct.unpack("<i", data[:4])[0]
    if d <= 0:
        raise VecFormatError(f"non-positive dimension {d}", 0)
    rec = 4 + d * esize
    if len(data) % rec == 0:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, rec)
        headers = raw[:, :4].copy().view("<i4").ravel()
        bad = np.nonzero(headers != d)[0]
        if len(bad) == 0:
            return raw[:, 4:].copy().view(dtype).reshape(-1, d)
        # fall through to the walk to report the exact offset
    offset = 0
    while offset < len(data):
        if offset + 4 > len(data):
            raise VecFormatError("truncated dimension header", offset)
        di = struct.unpack("<i", data[offset : offset + 4])[0]
        if di != d:
            raise VecFormatError(f"dimension changed from {d} to {di}", offset)
        if offset + rec > len(data):
            raise VecFormatError("truncated record", offset)
        offset += rec
    raise VecFormatError("inconsistent record layout", offset)


def write_vecs(path: str, mat: np.ndarray, kind: str = "f32") -> None:
    if kind not in _VEC_KINDS:
        raise ValueError(f"unknown vector kind: {kind}")
    dtype, _ = _VEC_KINDS[kind]
    mat = np.ascontiguousarray(mat, dtype=dtype)
    if mat.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, d = mat.shape
    header = np.full((n, 1), d, dtype="<i4")
    with open(path, "wb") as f:
        if n:
            body = np.hstack([header.view(np.uint8).reshape(n, 4),
                              mat.view(np.uint8).reshape(n, -1)])
            f.write(body.tobytes())


def write_attributes(path: str, numeric_attrs: Sequence[int],
                     labels: Sequence[frozenset]) -> None:
    """One line per id: ``numeric_attr,label1;label2;...``."""
    with open(path, "w") as f:
        for a, s in zip(numeric_attrs, labels):
            f.write(f"{int(a)},{';'.join(str(x) for x in sorted(s))}\n")


def read_attributes(path: str) -> Tuple[np.ndarray, List[frozenset]]:
    attrs: List[int] = []
    labels: List[frozenset] = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            a, _, rest = line.partition(",")
            attrs.append(int(a))
            labels.append(frozenset(int(x) for x in rest.split(";") if x))
    return np.array(attrs, dtype=np.int64), labels


# ---------------------------------------------------------------------------
# Workload generation
# ---------------------------------------------------------------------------


@dataclass
class WorkloadSpec:
    n: int = 10_000
    d: int = 32
    vector_distribution: str = "uniform"
    numeric_attr_domain: Tuple[int, int] = (0, 100_000)
    label_count: int = 500
    label_probabilities: Dict[int, float] = field(default_factory=dict)
    selectivity_levels: Tuple[float, ...] = (0.001, 0.01, 0.1, 0.5, 1.0)
    query_count: int = 10_000
    k: int = 10
    recall_target: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if sum(self.label_probabilities.values()) > 1.0 + 1e-9:
            raise ValueError("label probabilities must sum to <= 1")
        for s in self.selectivity_levels:
            if not (0.0 < s <= 1.0):
                raise ValueError("selectivities must lie in (0, 1]")
        if self.vector_distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution: {self.vector_distribution}")

    @property
    def background_label(self) -> int:
        """Label given to points that drew none of the configured labels."""
        return self.label_count


def _draw_vectors(rng: np.random.Generator, count: int, d: int,
                  distribution: str) -> np.ndarray:
    if distribution == "uniform":
        return rng.random((count, d), dtype=np.float32)
    return rng.standard_normal((count, d)).astype(np.float32)


def gen_attributes(spec: WorkloadSpec, rng: Optional[np.random.Generator] = None
                   ) -> Tuple[np.ndarray, List[frozenset]]:
    """Uniform numeric attributes plus independent per-label coin flips.

    Points left with an empty label set receive the background label so
    every point carries at least one.
    """
    rng = rng or np.random.default_rng(spec.seed)
    lo, hi = spec.numeric_attr_domain
    attrs = rng.integers(lo, hi + 1, size=spec.n, dtype=np.int64)
    sets: List[set] = [set() for _ in range(spec.n)]
    for lab in sorted(spec.label_probabilities):
        hit = np.nonzero(rng.random(spec.n) < spec.label_probabilities[lab])[0]
        for i in hit:
            sets[i].add(lab)
    for s in sets:
        if not s:
            s.add(spec.background_label)
    return attrs, [frozenset(s) for s in sets]


def gen_dataset(spec: WorkloadSpec) -> AttributedDataset:
    rng = np.random.default_rng(spec.seed)
    vectors = _draw_vectors(rng, spec.n, spec.d, spec.vector_distribution)
    attrs, labels = gen_attributes(spec, rng)
    return AttributedDataset(vectors, attrs, labels)


def gen_range_queries(ds: AttributedDataset, selectivity: float, count: int,
                      distribution: str = "uniform", k: int = 10,
                      seed: int = 1) -> List[FilteredQuery]:
    """Rank-exact attribute windows of width round(s * n) at uniform starts."""
    w = int(round(selectivity * ds.n))
    if w < 1:
        raise ValueError(f"selectivity {selectivity} selects no points at n={ds.n}")
    rng = np.random.default_rng(seed)
    vectors = _draw_vectors(rng, count, ds.dim, distribution)
    starts = rng.integers(0, ds.n - w + 1, size=count)
    out = []
    for i in range(count):
        lo = int(ds.sorted_attrs[starts[i]])
        hi = int(ds.sorted_attrs[starts[i] + w - 1])
        out.append(FilteredQuery(vectors[i], RangePredicate(lo, hi), k=k))
    return out


def gen_label_queries(ds: AttributedDataset, label: int, count: int,
                      distribution: str = "uniform", k: int = 10,
                      seed: int = 1) -> List[FilteredQuery]:
    rng = np.random.default_rng(seed)
    vectors = _draw_vectors(rng, count, ds.dim, distribution)
    return [FilteredQuery(v, LabelPredicate(label), k=k) for v in vectors]


# ---------------------------------------------------------------------------
# ef tuning
# ---------------------------------------------------------------------------


@dataclass
class TuneResult:
    ef: int
    qps: float
    recall: float
    mean_comparisons: float
    failed: bool


def _workload_eval(search_fn: Callable[[FilteredQuery, int], SearchResult],
                   queries: Sequence[FilteredQuery], truth: GroundTruth,
                   ef: int) -> Tuple[float, float]:
    recalls: List[float] = []
    comparisons: List[int] = []
    for q, t in zip(queries, truth.entries):
        res = search_fn(q, ef)
        comparisons.append(res.comparisons)
        if len(t.ids):
            recalls.append(recall_at_k(res, t))
    recall = float(np.mean(recalls)) if recalls else 0.0
    return recall, float(np.mean(comparisons)) if comparisons else 0.0


def tune_ef_for_recall(search_fn: Callable[[FilteredQuery, int], SearchResult],
                       queries: Sequence[FilteredQuery], truth: GroundTruth,
                       target: float, ef_cap: int = 4096,
                       k: int = 10) -> TuneResult:
    """Smallest ef in [k, ef_cap] whose workload-mean recall meets the
    target: exponential probe then bisection."""
    ef = max(k, 1)
    recall, comps = _workload_eval(search_fn, queries, truth, ef)
    if recall < target:
        lo = ef
        hi = None
        while ef < ef_cap:
            ef = min(ef * 2, ef_cap)
            recall, comps = _workload_eval(search_fn, queries, truth, ef)
            if recall >= target:
                hi = ef
                break
            lo = ef
        if hi is None:
            qps = measure_qps(lambda q: search_fn(q, ef_cap), queries)
            return TuneResult(ef=ef_cap, qps=qps, recall=recall,
                              mean_comparisons=comps, failed=True)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            r_mid, c_mid = _workload_eval(search_fn, queries, truth, mid)
            if r_mid >= target:
                hi, recall, comps = mid, r_mid, c_mid
            else:
                lo = mid
        ef = hi
    qps = measure_qps(lambda q: search_fn(q, ef), queries)
    return TuneResult(ef=ef, qps=qps, recall=recall,
                      mean_comparisons=comps, failed=False)


# ---------------------------------------------------------------------------
# Benchmark runner
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    method: str
    selectivity: float
    recall: float
    qps: float
    mean_comparisons: float
    ef_used: int
    build_seconds: float
    index_bytes: int
    peak_memory_estimate: int
    failed: bool


BENCH_COLUMNS = [f.name for f in dataclasses.fields(BenchRow)]
BENCH_FORMAT_VERSION = 1


def approx_nbytes(obj, _seen: Optional[set] = None) -> int:
    """Rough index footprint: every numpy array reachable from the object."""
    if _seen is None:
        _seen = set()
    if id(obj) in _seen:
        return 0
    _seen.add(id(obj))
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    total = 0
    if isinstance(obj, dict):
        for v in obj.values():
            total += approx_nbytes(v, _seen)
    elif isinstance(obj, (list, tuple, set)):
        for v in obj:
            total += approx_nbytes(v, _seen)
    elif hasattr(obj, "__dict__"):
        for v in vars(obj).values():
            total += approx_nbytes(v, _seen)
    elif hasattr(obj, "__slots__"):
        for name in obj.__slots__:
            total += approx_nbytes(getattr(obj, name, None), _seen)
    return total


class _Adapter:
    """Uniform build/search surface over one method."""

    def __init__(self, name: str, build_fn, search_fn):
        self.name = name
        self._build = build_fn
        self._search = search_fn
        self.index = None

    def build(self, ds: AttributedDataset, params: Dict) -> None:
        self.index = self._build(ds, params)

    def search(self, ds: AttributedDataset, q: FilteredQuery, ef: int,
               params: Dict) -> SearchResult:
        return self._search(self.index, ds, q, ef, params)


def _rank_range(ds: AttributedDataset, q: FilteredQuery):
    if q.predicate is None:
        return 0, ds.n - 1
    if not isinstance(q.predicate, RangePredicate):
        raise TypeError(f"{q.predicate!r} is not a range predicate")
    return ds.attr_range_to_rank_range(q.predicate.lo, q.predicate.hi)


def _empty_result() -> SearchResult:
    return SearchResult(ids=[], distances=[], comparisons=0)


def _bitmap(ds, q):
    return arbitrary.compile_predicate(q.predicate, ds)


def _build_prefilter(ds, p):
    return None


def _search_prefilter(index, ds, q, ef, p):
    return arbitrary.pre_filter_scan(ds, _bitmap(ds, q), q.vector, q.k)


def _build_hnsw(ds, p):
    return baseline.build_hnsw(ds, p.get("M", 16), p.get("ef_construction", 200),
                               prune=p.get("prune", "rng"), seed=p.get("seed", 0))


def _search_postfilter(index, ds, q, ef, p):
    return arbitrary.post_filter_search(index, _bitmap(ds, q), q.vector,
                                        ef, q.k)


def _search_joint(index, ds, q, ef, p):
    return arbitrary.joint_filter_search(index, _bitmap(ds, q), q.vector,
                                         max(ef, q.k), q.k,
                                         expand_nonmembers=p.get(
                                             "expand_nonmembers", True))


def _build_ivf(ds, p):
    return baseline.build_ivf(ds, p.get("nlist", min(64, ds.n)),
                              seed=p.get("seed", 0))


def _search_ivf(index, ds, q, ef, p):
    nprobe = min(max(1, ef), index.nlist)
    return index.search(q.vector, nprobe, q.k,
                        accept=_bitmap(ds, q).mask)


def _build_acorn(ds, p):
    return arbitrary.build_acorn(ds, p.get("M", 16),
                                 p.get("ef_construction", 200),
                                 tau=p.get("tau"), seed=p.get("seed", 0))


def _search_acorn(index, ds, q, ef, p):
    return index.search(q.vector, _bitmap(ds, q), max(ef, q.k), q.k)


def _build_partitioned(ds, p):
    return arbitrary.build_partitioned(
        ds, P=p.get("P", 64), kind=p.get("kind", "hnsw"),
        scan_threshold=p.get("scan_threshold", 0.1), M=p.get("M", 16),
        ef_construction=p.get("ef_construction", 100),
        nlist=p.get("nlist", 32), seed=p.get("seed", 0))


def _search_partitioned(index, ds, q, ef, p):
    return index.search(q.vector, q.predicate, _bitmap(ds, q),
                        max(ef, q.k), q.k)


def _build_segmented_edge(ds, p):
    return rangeindex.build_segmented_edge_graph(
        ds, p.get("M", 16), p.get("ef_construction", 200),
        prune=p.get("prune", "keep-nearest"), seed=p.get("seed", 0),
        keep_build_log=False)


def _search_segmented_edge(index, ds, q, ef, p):
    rr = _rank_range(ds, q)
    if rr is None:
        return _empty_result()
    return index.search(q.vector, rr, max(ef, q.k), q.k,
                        ep_count=p.get("ep_count", 3))


def _build_segment_tree(ds, p):
    return rangeindex.build_segment_tree(
        ds, B=p.get("B", 64), M=p.get("M", 16),
        ef_construction=p.get("ef_construction", 200), seed=p.get("seed", 0))


def _search_tree_merge(index, ds, q, ef, p):
    rr = _rank_range(ds, q)
    if rr is None:
        return _empty_result()
    return index.search_merge(q.vector, rr, max(ef, q.k), q.k)


def _search_tree_fused(index, ds, q, ef, p):
    rr = _rank_range(ds, q)
    if rr is None:
        return _empty_result()
    return index.search_fused(q.vector, rr, max(ef, q.k), q.k)


def _build_segmented_hnsw(ds, p):
    return rangeindex.build_segmented_hnsw(
        ds, S=p.get("S", 8), M=p.get("M", 16),
        ef_construction=p.get("ef_construction", 200),
        sel_low=p.get("sel_low", 0.005), sel_high=p.get("sel_high", 0.5),
        seed=p.get("seed", 0))


def _search_segmented_hnsw(index, ds, q, ef, p):
    rr = _rank_range(ds, q)
    if rr is None:
        return _empty_result()
    return index.search(q.vector, rr, max(ef, q.k), q.k)


def _label_of_query(q: FilteredQuery) -> int:
    if not isinstance(q.predicate, LabelPredicate):
        raise TypeError(f"{q.predicate!r} is not a label predicate")
    return q.predicate.label


def _build_filtered_vamana(ds, p):
    return labelindex.build_filtered_vamana(
        ds, p.get("M", 16), p.get("ef_construction", 200), seed=p.get("seed", 0))


def _build_stitched(ds, p):
    return labelindex.build_stitched(
        ds, p.get("M_small", 8), p.get("M", 16),
        p.get("ef_construction", 200), seed=p.get("seed", 0))


def _search_label(index, ds, q, ef, p):
    return index.search(q.vector, _label_of_query(q), max(ef, q.k), q.k)


def _single_label_matrix(ds: AttributedDataset) -> np.ndarray:
    return np.array([[min(s)] if s else [-1] for s in ds.labels],
                    dtype=np.int64)


def _build_fused_kgraph(ds, p):
    return labelindex.build_fused(ds, p.get("M", 16), _single_label_matrix(ds),
                                  variant="keep-nearest", w1=p.get("w1", 1.0),
                                  w2=p.get("w2"), seed=p.get("seed", 0))


def _build_fused_nsw(ds, p):
    return labelindex.build_fused(ds, p.get("M", 16), _single_label_matrix(ds),
                                  variant="nsw", w1=p.get("w1", 1.0),
                                  w2=p.get("w2"), seed=p.get("seed", 0))


def _search_fused(index, ds, q, ef, p):
    return index.search(q.vector, [_label_of_query(q)], max(ef, q.k), q.k)


METHODS: Dict[str, Tuple[Callable, Callable]] = {
    "prefilter-scan": (_build_prefilter, _search_prefilter),
    "hnsw-postfilter": (_build_hnsw, _search_postfilter),
    "hnsw-joint": (_build_hnsw, _search_joint),
    "ivf-prefilter": (_build_ivf, _search_ivf),
    "acorn": (_build_acorn, _search_acorn),
    "partitioned": (_build_partitioned, _search_partitioned),
    "segmented-edge": (_build_segmented_edge, _search_segmented_edge),
    "segment-tree-merge": (_build_segment_tree, _search_tree_merge),
    "segment-tree-fused": (_build_segment_tree, _search_tree_fused),
    "segmented-hnsw": (_build_segmented_hnsw, _search_segmented_hnsw),
    "filtered-vamana": (_build_filtered_vamana, _search_label),
    "stitched-vamana": (_build_stitched, _search_label),
    "nhq-kgraph": (_build_fused_kgraph, _search_fused),
    "nhq-nsw": (_build_fused_nsw, _search_fused),
}

LABEL_METHODS = {"filtered-vamana", "stitched-vamana", "nhq-kgraph", "nhq-nsw"}


def make_adapter(name: str) -> _Adapter:
    if name not in METHODS:
        raise ValueError(f"unknown method: {name} (known: {sorted(METHODS)})")
    build_fn, search_fn = METHODS[name]
    return _Adapter(name, build_fn, search_fn)


@dataclass
class BenchConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    methods: Tuple[str, ...] = ("prefilter-scan",)
    method_params: Dict[str, Dict] = field(default_factory=dict)
    selectivities: Optional[Tuple[float, ...]] = None
    ef_cap: int = 4096
    ep_count: Optional[int] = None
    prune: Optional[str] = None
    out_csv: Optional[str] = None
    out_jsonl: Optional[str] = None


def _queries_for(ds: AttributedDataset, spec: WorkloadSpec, method: str,
                 selectivity: float) -> List[FilteredQuery]:
    if method in LABEL_METHODS:
        if not spec.label_probabilities:
            raise ValueError("label methods need label_probabilities in the spec")
        label = min(spec.label_probabilities,
                    key=lambda lab: abs(spec.label_probabilities[lab] - selectivity))
        return gen_label_queries(ds, label, spec.query_count,
                                 spec.vector_distribution, spec.k,
                                 seed=spec.seed + 1)
    return gen_range_queries(ds, selectivity, spec.query_count,
                             spec.vector_distribution, spec.k,
                             seed=spec.seed + 1)


def run_benchmark(config: BenchConfig) -> List[BenchRow]:
    spec = config.workload
    ds = gen_dataset(spec)
    sels = config.selectivities or spec.selectivity_levels
    rows: List[BenchRow] = []
    truth_cache: Dict[str, GroundTruth] = {}
    base_bytes = ds.vectors.nbytes + ds.numeric_attrs.nbytes

    for method in config.methods:
        params = dict(config.method_params.get(method, {}))
        if config.prune is not None:
            params["prune"] = config.prune
        if config.ep_count is not None:
            params["ep_count"] = config.ep_count
        adapter = make_adapter(method)
        try:
            t0 = time.perf_counter()
            adapter.build(ds, params)
            build_seconds = time.perf_counter() - t0
        except Exception:
            for s in sels:
                rows.append(BenchRow(method, s, 0.0, 0.0, 0.0, 0, 0.0, 0, 0,
                                     failed=True))
            continue
        index_bytes = approx_nbytes(adapter.index)
        for s in sels:
            try:
                queries = _queries_for(ds, spec, method, s)
                key = f"{method in LABEL_METHODS}-{s}"
                if key not in truth_cache:
                    truth_cache[key] = ground_truth(ds, queries, spec.k)
                truth = truth_cache[key]
                tune = tune_ef_for_recall(
                    lambda q, ef: adapter.search(ds, q, ef, params),
                    queries, truth, spec.recall_target,
                    ef_cap=config.ef_cap, k=spec.k)
                rows.append(BenchRow(
                    method=method, selectivity=s, recall=tune.recall,
                    qps=tune.qps, mean_comparisons=tune.mean_comparisons,
                    ef_used=tune.ef, build_seconds=build_seconds,
                    index_bytes=index_bytes,
                    peak_memory_estimate=index_bytes + base_bytes,
                    failed=tune.failed))
            except Exception:
                rows.append(BenchRow(method, s, 0.0, 0.0, 0.0, 0,
                                     build_seconds, index_bytes,
                                     index_bytes + base_bytes, failed=True))
    if config.out_csv:
        write_rows_csv(config.out_csv, rows)
    if config.out_jsonl:
        write_rows_jsonl(config.out_jsonl, rows)
    return rows


def write_rows_csv(path: str, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, c) for c in BENCH_COLUMNS])


def read_rows_csv(path: str) -> List[BenchRow]:
    out: List[BenchRow] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != BENCH_COLUMNS:
            raise ValueError(f"unexpected columns: {reader.fieldnames}")
        for row in reader:
            out.append(BenchRow(
                method=row["method"], selectivity=float(row["selectivity"]),
                recall=float(row["recall"]), qps=float(row["qps"]),
                mean_comparisons=float(row["mean_comparisons"]),
                ef_used=int(row["ef_used"]),
                build_seconds=float(row["build_seconds"]),
                index_bytes=int(row["index_bytes"]),
                peak_memory_estimate=int(row["peak_memory_estimate"]),
                failed=row["failed"] == "True"))
    return out


def write_rows_jsonl(path: str, rows: Sequence[BenchRow]) -> None:
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(dataclasses.asdict(r)) + "\n")
