"""Pre-, post-, and joint-filtering on an arbitrary membership bitmap.

Any predicate that can be compiled to a boolean mask over the dataset
can drive these strategies; here a conjunction of two attribute ranges
plays that role.
"""
import numpy as np

from fannkit.arbitrary import (
    build_acorn,
    compile_predicate,
    joint_filter_search,
    post_filter_search,
    pre_filter_scan,
)
from fannkit.baseline import build_hnsw
from fannkit.core import ConjunctionPredicate, RangePredicate
from fannkit.evaluate import ground_truth, mean_recall
from fannkit.harness import WorkloadSpec, gen_dataset
from fannkit.core import FilteredQuery


def main():
    spec = WorkloadSpec(n=4_000, d=16, seed=5)
    ds = gen_dataset(spec)
    predicate = ConjunctionPredicate(RangePredicate(10_000, 60_000),
                                     RangePredicate(25_000, 90_000))
    bitmap = compile_predicate(predicate, ds)
    print(f"predicate matches {bitmap.matched_count} of {ds.n} points "
          f"(selectivity {bitmap.selectivity:.1%})")

    print("building unfiltered graph and predicate-agnostic graph...")
    hnsw = build_hnsw(ds, 12, 100, seed=0)
    acorn = build_acorn(ds, 12, 100, seed=0)

    rng = np.random.default_rng(2)
    k, ef = 10, 96
    queries = [FilteredQuery(rng.random(16, dtype=np.float32), predicate, k=k)
               for _ in range(50)]
    truth = ground_truth(ds, queries, k)

    strategies = {
        "pre-filter scan": lambda q: pre_filter_scan(ds, bitmap, q.vector, k),
        "post-filter": lambda q: post_filter_search(hnsw, bitmap, q.vector,
                                                    ef, k),
        "joint-filter": lambda q: joint_filter_search(
            hnsw, bitmap, q.vector, ef, k, expand_nonmembers=True),
        "two-hop bridge": lambda q: acorn.search(q.vector, bitmap, ef, k),
    }
    print()
    print(f"{'strategy':>16} {'recall':>7} {'cmp/query':>10}")
    for name, fn in strategies.items():
        results = [fn(q) for q in queries]
        comps = np.mean([r.comparisons for r in results])
        print(f"{name:>16} {mean_recall(results, truth):>7.3f} {comps:>10.1f}")


if __name__ == "__main__":
    main()
