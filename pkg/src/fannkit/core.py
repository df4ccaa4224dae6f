"""Core types: attributed vectors, filter predicates, counted distances."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np


class DimensionError(ValueError):
    """Vector lengths disagree with the dataset dimension."""


class UndefinedSelectivityError(ValueError):
    """Selectivity requested on an empty dataset."""


@dataclass(frozen=True)
class DataPoint:
    """One vector with its numeric attribute and label set."""

    id: int
    vector: np.ndarray
    numeric_attr: int = 0
    labels: FrozenSet[int] = frozenset()


class AttributedDataset:
    """Immutable collection of vectors with numeric attributes and labels.

    Vectors are stored as a single float32 matrix; ``attr_rank`` maps
    attribute-sorted rank -> id and ``rank_of`` is its inverse.
    """

    def __init__(
        self,
        vectors: np.ndarray,
        numeric_attrs: Optional[Sequence[int]] = None,
        labels: Optional[Sequence[FrozenSet[int]]] = None,
    ):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DimensionError("vectors must be a 2-D array")
        self.vectors = vectors
        self.n, self.dim = vectors.shape
        if numeric_attrs is None:
            numeric_attrs = np.zeros(self.n, dtype=np.int64)
        self.numeric_attrs = np.asarray(numeric_attrs, dtype=np.int64)
        if self.numeric_attrs.shape != (self.n,):
            raise DimensionError("one numeric attribute per vector required")
        if labels is None:
            labels = [frozenset()] * self.n
        if len(labels) != self.n:
            raise DimensionError("one label set per vector required")
        self.labels: List[FrozenSet[int]] = [frozenset(s) for s in labels]
        # Stable sort keeps equal attributes in id order.
        self.attr_rank = np.argsort(self.numeric_attrs, kind="stable").astype(np.int64)
        self.rank_of = np.empty(self.n, dtype=np.int64)
        self.rank_of[self.attr_rank] = np.arange(self.n)
        self.sorted_attrs = self.numeric_attrs[self.attr_rank]
        self._label_members: Dict[int, np.ndarray] = {}

    @classmethod
    def from_points(cls, points: Sequence[DataPoint]) -> "AttributedDataset":
        points = sorted(points, key=lambda p: p.id)
        ids = [p.id for p in points]
        if ids != list(range(len(points))):
            raise ValueError("point ids must be 0..n-1 and unique")
        vectors = np.stack([np.asarray(p.vector, dtype=np.float32) for p in points])
        return cls(vectors, [p.numeric_attr for p in points], [p.labels for p in points])

    def point(self, i: int) -> DataPoint:
        return DataPoint(i, self.vectors[i], int(self.numeric_attrs[i]), self.labels[i])

    def label_members(self, label: int) -> np.ndarray:
        """Boolean membership array for one label, computed lazily."""
        if label not in self._label_members:
            mask = np.zeros(self.n, dtype=bool)
            for i, s in enumerate(self.labels):
                if label in s:
                    mask[i] = True
            self._label_members[label] = mask
        return self._label_members[label]

    def attr_range_to_rank_range(self, lo: int, hi: int) -> Optional[Tuple[int, int]]:
        """Convert an attribute-value range to the rank span it covers.

        Duplicate attribute values map to the maximal rank span.  Returns
        ``None`` when no point falls inside the value range.
        """
        left = int(np.searchsorted(self.sorted_attrs, lo, side="left"))
        right = int(np.searchsorted(self.sorted_attrs, hi, side="right")) - 1
        if left > right:
            return None
        return left, right


@dataclass(frozen=True)
class RangePredicate:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("range predicate requires lo <= hi")


@dataclass(frozen=True)
class LabelPredicate:
    label: int


@dataclass(frozen=True)
class ConjunctionPredicate:
    parts: Tuple["FilterPredicate", ...]

    def __init__(self, *parts: "FilterPredicate"):
        object.__setattr__(self, "parts", tuple(parts))


FilterPredicate = Union[RangePredicate, LabelPredicate, ConjunctionPredicate]


def evaluate_predicate(pred: FilterPredicate, p: DataPoint) -> bool:
    if isinstance(pred, RangePredicate):
        return pred.lo <= p.numeric_attr <= pred.hi
    if isinstance(pred, LabelPredicate):
        return pred.label in p.labels
    if isinstance(pred, ConjunctionPredicate):
        return all(evaluate_predicate(part, p) for part in pred.parts)
    raise TypeError(f"unknown predicate: {pred!r}")


def predicate_mask(pred: FilterPredicate, ds: AttributedDataset) -> np.ndarray:
    """Vectorized membership array for a predicate over a whole dataset."""
    if isinstance(pred, RangePredicate):
        return (ds.numeric_attrs >= pred.lo) & (ds.numeric_attrs <= pred.hi)
    if isinstance(pred, LabelPredicate):
        return ds.label_members(pred.label).copy()
    if isinstance(pred, ConjunctionPredicate):
        mask = np.ones(ds.n, dtype=bool)
        for part in pred.parts:
            mask &= predicate_mask(part, ds)
        return mask
    raise TypeError(f"unknown predicate: {pred!r}")


def exact_selectivity(pred: FilterPredicate, ds: AttributedDataset) -> float:
    if ds.n == 0:
        raise UndefinedSelectivityError("selectivity undefined on an empty dataset")
    return float(predicate_mask(pred, ds).sum()) / ds.n


@dataclass(frozen=True)
class FilteredQuery:
    vector: np.ndarray
    predicate: Optional[FilterPredicate]
    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class SearchResult:
    """Ranked ids with their distances plus per-query work accounting."""

    ids: List[int]
    distances: List[float]
    comparisons: int = 0
    phase_times: Dict[str, float] = field(default_factory=dict)
    approximate_on_predicate: bool = False
    partial: bool = False


class DistanceContext:
    """Counts every distance evaluation charged to one query."""

    __slots__ = ("vectors", "count")

    def __init__(self, vectors: np.ndarray):
        self.vectors = vectors
        self.count = 0

    def one(self, a: np.ndarray, b: np.ndarray) -> float:
        self.count += 1
        return float(np.linalg.norm(np.asarray(a, dtype=np.float32) - b))

    def to_point(self, q: np.ndarray, i: int) -> float:
        self.count += 1
        return float(np.linalg.norm(self.vectors[i] - q))

    def to_points(self, q: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Distances from q to a batch of dataset ids, one comparison each."""
        self.count += len(ids)
        diff = self.vectors[ids] - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def l2_distance(a, b, ctx: Optional[DistanceContext] = None) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    if ctx is not None:
        ctx.count += 1
    return float(np.linalg.norm(a - b))
