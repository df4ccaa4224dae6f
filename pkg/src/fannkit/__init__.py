"""Filtering approximate nearest neighbor search toolkit."""

from .core import (
    AttributedDataset,
    ConjunctionPredicate,
    DataPoint,
    DistanceContext,
    FilteredQuery,
    LabelPredicate,
    RangePredicate,
    SearchResult,
    evaluate_predicate,
    exact_selectivity,
    l2_distance,
)

__all__ = [
    "AttributedDataset",
    "ConjunctionPredicate",
    "DataPoint",
    "DistanceContext",
    "FilteredQuery",
    "LabelPredicate",
    "RangePredicate",
    "SearchResult",
    "evaluate_predicate",
    "exact_selectivity",
    "l2_distance",
]
