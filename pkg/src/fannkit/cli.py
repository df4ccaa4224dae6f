"""Command-line front end: data/query generation, ground truth, index
build/search, and the benchmark runner."""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import baseline, rangeindex, storage
from .core import (
    AttributedDataset,
    FilteredQuery,
    LabelPredicate,
    RangePredicate,
)
from .evaluate import (
    ground_truth,
    load_ground_truth,
    save_ground_truth,
)
from .harness import (
    BENCH_COLUMNS,
    BenchConfig,
    WorkloadSpec,
    gen_dataset,
    gen_label_queries,
    gen_range_queries,
    make_adapter,
    read_attributes,
    read_rows_csv,
    read_vecs,
    run_benchmark,
    write_attributes,
    write_vecs,
)

PRUNE_CHOICES = ("rng", "two-hop", "label-covered", "keep-nearest")


def _typed(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def load_config(path: Optional[str]) -> Dict[str, Dict[str, object]]:
    """INI-style config: a [workload] block, a [bench] block, and one
    [method.NAME] block per method; every value overridable by flags."""
    out: Dict[str, Dict[str, object]] = {}
    if path is None:
        return out
    cp = configparser.ConfigParser()
    with open(path) as f:
        cp.read_file(f)
    for section in cp.sections():
        out[section] = {k: _typed(v) for k, v in cp.items(section)}
    return out


def _spec_from_config(cfg: Dict[str, Dict[str, object]],
                      seed: Optional[int]) -> WorkloadSpec:
    w = dict(cfg.get("workload", {}))
    if "label_probabilities" in w:
        w["label_probabilities"] = {
            int(k): float(v)
            for k, v in (item.split(":") for item in str(w["label_probabilities"]).split())
        }
    if "selectivity_levels" in w:
        w["selectivity_levels"] = tuple(
            float(x) for x in str(w["selectivity_levels"]).split())
    if "numeric_attr_domain" in w:
        lo, hi = str(w["numeric_attr_domain"]).split()
        w["numeric_attr_domain"] = (int(lo), int(hi))
    if seed is not None:
        w["seed"] = seed
    return WorkloadSpec(**w)


def load_dataset(data_dir: str) -> AttributedDataset:
    vectors = read_vecs(os.path.join(data_dir, "data.fvecs"), "f32")
    attr_path = os.path.join(data_dir, "attributes.txt")
    if os.path.exists(attr_path):
        attrs, labels = read_attributes(attr_path)
        return AttributedDataset(vectors, attrs, labels)
    return AttributedDataset(vectors)


def write_predicates(path: str, queries: List[FilteredQuery]) -> None:
    with open(path, "w") as f:
        for q in queries:
            if isinstance(q.predicate, RangePredicate):
                f.write(f"range,{q.predicate.lo},{q.predicate.hi}\n")
            elif isinstance(q.predicate, LabelPredicate):
                f.write(f"label,{q.predicate.label}\n")
            elif q.predicate is None:
                f.write("none\n")
            else:
                raise ValueError(f"cannot serialize predicate {q.predicate!r}")


def read_predicates(path: str):
    preds = []
    with open(path) as f:
        for line in f:
            parts = line.strip().split(",")
            if parts[0] == "range":
                preds.append(RangePredicate(int(parts[1]), int(parts[2])))
            elif parts[0] == "label":
                preds.append(LabelPredicate(int(parts[1])))
            elif parts[0] == "none":
                preds.append(None)
            else:
                raise ValueError(f"bad predicate line: {line!r}")
    return preds


def load_queries(prefix: str, k: int = 10) -> List[FilteredQuery]:
    vectors = read_vecs(prefix + ".fvecs", "f32")
    preds = read_predicates(prefix + ".pred")
    if len(preds) != len(vectors):
        raise ValueError("query vectors and predicates disagree in count")
    return [FilteredQuery(v, p, k=k) for v, p in zip(vectors, preds)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    spec = _spec_from_config(cfg, args.seed)
    ds = gen_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    write_vecs(os.path.join(args.out, "data.fvecs"), ds.vectors, "f32")
    write_attributes(os.path.join(args.out, "attributes.txt"),
                     ds.numeric_attrs, ds.labels)
    print(f"wrote {ds.n} x {ds.dim} vectors to {args.out}")
    return 0


def cmd_gen_queries(args) -> int:
    cfg = load_config(args.config)
    spec = _spec_from_config(cfg, args.seed)
    ds = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    for s in args.selectivity:
        if args.label is not None:
            queries = gen_label_queries(ds, args.label, args.count,
                                        spec.vector_distribution, spec.k,
                                        seed=spec.seed + 1)
            name = f"queries-label{args.label}"
        else:
            queries = gen_range_queries(ds, s, args.count,
                                        spec.vector_distribution, spec.k,
                                        seed=spec.seed + 1)
            name = f"queries-s{s:g}"
        prefix = os.path.join(args.out, name)
        write_vecs(prefix + ".fvecs", np.stack([q.vector for q in queries]), "f32")
        write_predicates(prefix + ".pred", queries)
        print(f"wrote {len(queries)} queries to {prefix}.*")
        if args.label is not None:
            break
    return 0


def cmd_ground_truth(args) -> int:
    ds = load_dataset(args.data)
    queries = load_queries(args.queries, k=args.k)
    truth = ground_truth(ds, queries, args.k)
    save_ground_truth(args.out, truth)
    short = sum(1 for e in truth.entries if e.short)
    print(f"wrote truth for {len(truth)} queries ({short} short) to {args.out}")
    return 0


def cmd_build(args) -> int:
    cfg = load_config(args.config)
    ds = load_dataset(args.data)
    params = dict(cfg.get(f"method.{args.method}", {}))
    if args.prune is not None:
        params["prune"] = args.prune
    if args.seed is not None:
        params["seed"] = args.seed
    adapter = make_adapter(args.method)
    adapter.build(ds, params)
    if adapter.index is None:
        print(f"method {args.method} has no index to store", file=sys.stderr)
        return 1
    storage.save_index(args.out, adapter.index)
    print(f"built {args.method} and wrote {os.path.getsize(args.out)} bytes "
          f"to {args.out}")
    return 0


def _searcher_for(index, ds: AttributedDataset, ep_count: Optional[int]):
    from . import arbitrary

    def run(q: FilteredQuery, ef: int):
        if isinstance(index, baseline.IvfIndex):
            bm = arbitrary.compile_predicate(q.predicate, ds) if q.predicate else None
            return index.search(q.vector, min(max(1, ef), index.nlist), q.k,
                                accept=None if bm is None else bm.mask)
        if isinstance(index, (rangeindex.SegmentedEdgeGraph,
                              rangeindex.SegmentTreeIndex)):
            if q.predicate is None:
                rr = (0, ds.n - 1)
            else:
                rr = ds.attr_range_to_rank_range(q.predicate.lo, q.predicate.hi)
            if rr is None:
                from .core import SearchResult
                return SearchResult(ids=[], distances=[])
            if isinstance(index, rangeindex.SegmentedEdgeGraph):
                return index.search(q.vector, rr, max(ef, q.k), q.k,
                                    ep_count=ep_count or 3)
            return index.search_merge(q.vector, rr, max(ef, q.k), q.k)
        # graph baselines: joint filtering when a predicate is present
        if q.predicate is None:
            return index.search(q.vector, max(ef, q.k), q.k)
        bm = arbitrary.compile_predicate(q.predicate, ds)
        return arbitrary.joint_filter_search(index, bm, q.vector,
                                             max(ef, q.k), q.k,
                                             expand_nonmembers=True)

    return run


def cmd_search(args) -> int:
    ds = load_dataset(args.data)
    index = storage.load_index(args.index, ds)
    queries = load_queries(args.queries, k=args.k)
    run = _searcher_for(index, ds, args.ep_count)
    rows = []
    for q in queries:
        res = run(q, args.ef)
        rows.append(res.ids + [-1] * (q.k - len(res.ids)))
    if args.out:
        write_vecs(args.out, np.array(rows, dtype=np.int32), "i32")
        print(f"wrote {len(rows)} result rows to {args.out}")
    else:
        for ids in rows:
            print(" ".join(str(i) for i in ids))
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    spec = _spec_from_config(cfg, args.seed)
    bench = dict(cfg.get("bench", {}))
    methods = tuple(args.method) if args.method else \
        tuple(str(bench.get("methods", "prefilter-scan")).split())
    method_params = {
        sec[len("method."):]: dict(body)
        for sec, body in cfg.items() if sec.startswith("method.")
    }
    config = BenchConfig(
        workload=spec,
        methods=methods,
        method_params=method_params,
        selectivities=tuple(args.selectivity) if args.selectivity else None,
        ef_cap=args.ef_cap or int(bench.get("ef_cap", 4096)),
        ep_count=args.ep_count,
        prune=args.prune,
        out_csv=args.out,
        out_jsonl=(args.out + ".jsonl") if args.out else None,
    )
    rows = run_benchmark(config)
    for r in rows:
        status = "FAILED" if r.failed else "ok"
        print(f"{r.method:>18s} s={r.selectivity:<6g} recall={r.recall:.3f} "
              f"qps={r.qps:8.1f} comparisons={r.mean_comparisons:10.1f} "
              f"ef={r.ef_used:<5d} {status}")
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = read_rows_csv(args.results)
    print(" ".join(BENCH_COLUMNS))
    for r in rows:
        print(json.dumps({c: getattr(r, c) for c in BENCH_COLUMNS}))
    by_method: Dict[str, List] = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    print()
    for method, group in sorted(by_method.items()):
        ok = [r for r in group if not r.failed]
        line = f"{method}: {len(ok)}/{len(group)} reached target"
        if ok:
            line += (f", qps {min(r.qps for r in ok):.0f}.."
                     f"{max(r.qps for r in ok):.0f}")
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fannkit",
        description="Filtering ANN toolkit: generate workloads, build "
                    "indexes, and benchmark filtered search strategies.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="INI config path")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("gen-data", help="generate vectors and attributes")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("gen-queries", help="generate filtered queries")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--selectivity", type=float, nargs="+", default=[0.1])
    sp.add_argument("--label", type=int, default=None,
                    help="emit label queries for this label instead")
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_gen_queries)

    sp = sub.add_parser("ground-truth", help="exact filtered ground truth")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--queries", required=True, help="query file prefix")
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--out", required=True, help="truth cache path")
    sp.set_defaults(fn=cmd_ground_truth)

    sp = sub.add_parser("build", help="build and serialize one index")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", required=True)
    sp.add_argument("--prune", choices=PRUNE_CHOICES, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_build)

    sp = sub.add_parser("search", help="run queries against a stored index")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--queries", required=True, help="query file prefix")
    sp.add_argument("--ef", type=int, default=64)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--ep-count", type=int, default=None)
    sp.add_argument("--out", default=None, help="ivecs result path")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("bench", help="run the benchmark matrix")
    common(sp)
    sp.add_argument("--method", nargs="+", default=None)
    sp.add_argument("--selectivity", type=float, nargs="+", default=None)
    sp.add_argument("--ef-cap", type=int, default=None)
    sp.add_argument("--ep-count", type=int, default=None)
    sp.add_argument("--prune", choices=PRUNE_CHOICES, default=None)
    sp.add_argument("--out", default=None, help="CSV output path")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("report", help="summarize a results CSV")
    sp.add_argument("--results", required=True)
    sp.set_defaults(fn=cmd_report)

    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
