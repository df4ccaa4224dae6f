"""Benchmark harness walkthrough.

Generates a workload, reports its hardness profile, runs the tuning
benchmark over a few strategies, and writes the results CSV that the
`fannkit report` subcommand consumes.
"""
import sys

from fannkit.core import FilteredQuery
from fannkit.evaluate import dataset_hardness, ground_truth
from fannkit.harness import (
    BenchConfig,
    WorkloadSpec,
    gen_dataset,
    gen_range_queries,
    run_benchmark,
)


def main():
    out_csv = sys.argv[1] if len(sys.argv) > 1 else "bench-results.csv"
    spec = WorkloadSpec(n=2_000, d=16, query_count=25, k=10,
                        selectivity_levels=(0.1, 0.5, 1.0), seed=3)
    ds = gen_dataset(spec)

    queries = gen_range_queries(ds, 0.1, 25, k=10, seed=4)
    truth = ground_truth(ds, queries, 10)
    hardness = dataset_hardness(ds, queries, truth)
    print(f"hardness: distance ratio {hardness.dis_ratio:.3f}, "
          f"query/dataset divergence {hardness.js_div:.4f}")

    config = BenchConfig(
        workload=spec,
        methods=("prefilter-scan", "hnsw-joint", "segment-tree-merge"),
        method_params={
            "hnsw-joint": {"M": 12, "ef_construction": 100},
            "segment-tree-merge": {"B": 64, "M": 12, "ef_construction": 100},
        },
        ef_cap=1024,
        out_csv=out_csv,
    )
    print("running benchmark (tunes ef per method and selectivity)...")
    rows = run_benchmark(config)
    print()
    print(f"{'method':>20} {'sel':>6} {'recall':>7} {'qps':>9} {'ef':>5} "
          f"{'status':>7}")
    for r in rows:
        status = "failed" if r.failed else "ok"
        print(f"{r.method:>20} {r.selectivity:>6g} {r.recall:>7.3f} "
              f"{r.qps:>9.1f} {r.ef_used:>5d} {status:>7}")
    print()
    print(f"wrote {out_csv}; inspect with: fannkit report --results {out_csv}")


if __name__ == "__main__":
    main()
