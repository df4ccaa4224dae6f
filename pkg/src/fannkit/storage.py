"""Versioned binary container for built indexes.

Layout: magic ``FANN``, format version, index kind, n, d, M, then a
kind-specific payload.  Adjacency lists are stored sorted and
delta-encoded; codebooks and vectors are raw little-endian.  Vectors and
attributes are not stored; loading takes the dataset the index was built
on.
"""
from __future__ import annotations

import struct
from typing import BinaryIO, Dict, List, Optional

import numpy as np

from .baseline import HnswIndex, IvfIndex, PqCodec, VamanaIndex
from .core import AttributedDataset
from .rangeindex import SegmentedEdgeGraph, SegmentTreeIndex, SegmentTreeNode

MAGIC = b"FANN"
FORMAT_VERSION = 1

KIND_HNSW = 1
KIND_VAMANA = 2
KIND_IVF = 3
KIND_SEGMENTED_EDGE = 4
KIND_SEGMENT_TREE = 5


class StorageError(ValueError):
    pass


def _w(f: BinaryIO, fmt: str, *vals) -> None:
    f.write(struct.pack("<" + fmt, *vals))


def _r(f: BinaryIO, fmt: str):
    size = struct.calcsize("<" + fmt)
    data = f.read(size)
    if len(data) != size:
        raise StorageError("truncated index file")
    return struct.unpack("<" + fmt, data)


def _w_str(f: BinaryIO, s: str) -> None:
    b = s.encode()
    _w(f, "H", len(b))
    f.write(b)


def _r_str(f: BinaryIO) -> str:
    (m,) = _r(f, "H")
    return f.read(m).decode()


def _w_ids(f: BinaryIO, ids: np.ndarray) -> None:
    """Sorted id list as first value plus non-negative deltas."""
    ids = np.sort(np.asarray(ids, dtype=np.int64))
    _w(f, "I", len(ids))
    if len(ids):
        deltas = np.diff(ids, prepend=0).astype("<i4")
        f.write(deltas.tobytes())


def _r_ids(f: BinaryIO) -> np.ndarray:
    (m,) = _r(f, "I")
    if m == 0:
        return np.empty(0, dtype=np.int64)
    deltas = np.frombuffer(f.read(4 * m), dtype="<i4")
    if len(deltas) != m:
        raise StorageError("truncated adjacency list")
    return np.cumsum(deltas.astype(np.int64))


def _w_adj(f: BinaryIO, adj: Dict[int, np.ndarray]) -> None:
    _w(f, "I", len(adj))
    for node in sorted(adj):
        _w(f, "i", node)
        _w_ids(f, adj[node])


def _r_adj(f: BinaryIO) -> Dict[int, np.ndarray]:
    (count,) = _r(f, "I")
    adj: Dict[int, np.ndarray] = {}
    for _ in range(count):
        (node,) = _r(f, "i")
        adj[node] = _r_ids(f)
    return adj


def _w_array(f: BinaryIO, a: np.ndarray, dtype: str) -> None:
    a = np.ascontiguousarray(a, dtype=dtype)
    _w(f, "I" * a.ndim, *a.shape)
    f.write(a.tobytes())


def _r_array(f: BinaryIO, shape_dims: int, dtype: str) -> np.ndarray:
    shape = _r(f, "I" * shape_dims)
    size = int(np.prod(shape)) * np.dtype(dtype).itemsize
    data = f.read(size)
    if len(data) != size:
        raise StorageError("truncated array")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def _header(f: BinaryIO, kind: int, n: int, d: int, M: int) -> None:
    f.write(MAGIC)
    _w(f, "IIQII", FORMAT_VERSION, kind, n, d, M)


def _read_header(f: BinaryIO):
    magic = f.read(4)
    if magic != MAGIC:
        raise StorageError("not an index container (bad magic)")
    version, kind, n, d, M = _r(f, "IIQII")
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported container version {version}")
    return kind, n, d, M


def save_index(path: str, index) -> None:
    with open(path, "wb") as f:
        if isinstance(index, HnswIndex):
            _header(f, KIND_HNSW, index.ds.n, index.ds.dim, index.M)
            _w_str(f, index.prune)
            _w(f, "IIii", index.ef_construction, index.seed,
               index.entry_point, index.max_level)
            _w_array(f, index.level_of, "<i4")
            _w(f, "I", len(index.layers))
            for layer in index.layers:
                _w_adj(f, layer)
        elif isinstance(index, VamanaIndex):
            _header(f, KIND_VAMANA, index.ds.n, index.ds.dim, index.M)
            _w(f, "id", index.medoid, index.alpha)
            _w_adj(f, index.adjacency)
        elif isinstance(index, IvfIndex):
            _header(f, KIND_IVF, index.ds.n, index.ds.dim, 0)
            _w(f, "II", index.nlist, index.seed)
            _w_array(f, index.centroids, "<f4")
            for posting in index.postings:
                _w_ids(f, posting)
            _w(f, "B", int(index.pq is not None))
            if index.pq is not None:
                _w(f, "III", index.pq.m, index.pq.ksub, index.pq.dsub)
                _w_array(f, index.pq.codebooks, "<f4")
                _w_array(f, index.pq.codes, "<u1")
        elif isinstance(index, SegmentedEdgeGraph):
            _header(f, KIND_SEGMENTED_EDGE, index.n, index.ds.dim, index.M)
            _w_str(f, index.prune)
            _w(f, "II", index.ef_construction, index.seed)
            for r in range(index.n):
                e = len(index.edge_target[r])
                _w(f, "I", e)
                # (target, l_lo, l_hi) triples; the creation group is
                # max(rank, target) by construction, so it is not stored.
                tri = np.empty((e, 3), dtype="<i4")
                tri[:, 0] = index.edge_target[r]
                tri[:, 1] = index.edge_llo[r]
                tri[:, 2] = index.edge_lhi[r]
                f.write(tri.tobytes())
        elif isinstance(index, SegmentTreeIndex):
            _header(f, KIND_SEGMENT_TREE, index.n, index.ds.dim, index.M)
            _w(f, "III", index.B, index.ef_construction, index.seed)

            def emit(node: SegmentTreeNode) -> None:
                _w(f, "iii", node.lo, node.hi, node.medoid)
                _w_adj(f, node.adjacency)
                if not node.is_leaf:
                    emit(node.left)
                    emit(node.right)

            emit(index.root)
        else:
            raise StorageError(f"cannot serialize {type(index).__name__}")


def load_index(path: str, ds: AttributedDataset):
    """Load a container written by save_index, rebinding it to ``ds``."""
    with open(path, "rb") as f:
        kind, n, d, M = _read_header(f)
        if (n, d) != (ds.n, ds.dim):
            raise StorageError(
                f"container built for n={n}, d={d}; got n={ds.n}, d={ds.dim}")
        if kind == KIND_HNSW:
            prune = _r_str(f)
            efc, seed, entry, max_level = _r(f, "IIii")
            index = HnswIndex(ds, M, efc, prune=prune, seed=seed)
            index.entry_point = entry
            index.max_level = max_level
            index.level_of = _r_array(f, 1, "<i4").astype(np.int32)
            (nlayers,) = _r(f, "I")
            index.layers = [_r_adj(f) for _ in range(nlayers)]
            return index
        if kind == KIND_VAMANA:
            medoid, alpha = _r(f, "id")
            adjacency = _r_adj(f)
            return VamanaIndex(ds, M, adjacency, medoid, alpha)
        if kind == KIND_IVF:
            nlist, seed = _r(f, "II")
            centroids = _r_array(f, 2, "<f4")
            postings = [_r_ids(f) for _ in range(nlist)]
            (has_pq,) = _r(f, "B")
            pq: Optional[PqCodec] = None
            if has_pq:
                m, ksub, dsub = _r(f, "III")
                codebooks = _r_array(f, 3, "<f4")
                codes = _r_array(f, 2, "<u1")
                pq = PqCodec(m, ksub, codebooks, codes)
            return IvfIndex(ds, centroids, postings, pq, seed)
        if kind == KIND_SEGMENTED_EDGE:
            prune = _r_str(f)
            efc, seed = _r(f, "II")
            g = SegmentedEdgeGraph(ds, M, efc, prune=prune, seed=seed,
                                   keep_build_log=False)
            for r in range(n):
                (e,) = _r(f, "I")
                tri = np.frombuffer(f.read(12 * e), dtype="<i4").reshape(e, 3)
                g.edge_target.append(tri[:, 0].astype(np.int64))
                g.edge_llo.append(tri[:, 1].astype(np.int64))
                g.edge_lhi.append(tri[:, 2].astype(np.int64))
                g.edge_group.append(np.maximum(r, tri[:, 0]).astype(np.int64))
            return g
        if kind == KIND_SEGMENT_TREE:
            B, efc, seed = _r(f, "III")
            index = SegmentTreeIndex(ds, B=B, M=M, ef_construction=efc,
                                     seed=seed)

            def read_node() -> SegmentTreeNode:
                lo, hi, medoid = _r(f, "iii")
                adjacency = _r_adj(f)
                node = SegmentTreeNode(lo, hi, adjacency, medoid)
                if hi - lo + 1 > B:
                    node.left = read_node()
                    node.right = read_node()
                return node

            index.root = read_node()
            return index
        raise StorageError(f"unknown index kind {kind}")
