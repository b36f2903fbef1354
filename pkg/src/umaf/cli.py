"""Command-line front end: solve, gen, reduce, oracle, and bench.

Machine-readable output is one JSON object per instance (JSON lines for
bench); human-readable text is the default for solve/oracle.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import time
from typing import Dict, List, Optional

from . import bnp, gen as genmod, newick, oracle as oraclemod, reduce as redmod

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_TIME_LIMIT = 3


def _label_blocks(blocks_labels) -> List[List[str]]:
    out = [sorted(b) for b in blocks_labels]
    return sorted(out, key=lambda b: (b[0], len(b)))


def _solve_report(
    blocks: List[List[str]],
    stats: bnp.SolveStats,
    reduced: bool,
    seed: Optional[int] = None,
) -> Dict:
    report = {
        "mafSize": len(blocks),
        "blocks": blocks,
        "columnsGenerated": stats.columns_generated,
        "branchNodes": stats.branch_nodes,
        "lpTimeMs": int(stats.lp_time * 1000),
        "pricingTimeMs": int(stats.pricing_time * 1000),
        "totalTimeMs": int(stats.total_time * 1000),
        "optimal": stats.optimal,
        "epsilon": stats.epsilon,
        "strategy": stats.strategy,
        "reduced": reduced,
    }
    if seed is not None:
        report["seed"] = seed
    return report


def _print_report(report: Dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report))
        return
    print(f"forest size : {report['mafSize']}")
    for block in report["blocks"]:
        print("  block     : " + ",".join(block))
    print(f"columns     : {report['columnsGenerated']}")
    print(f"branch nodes: {report['branchNodes']}")
    print(f"optimal     : {report['optimal']}")
    print(
        "time        : %d ms (lp %d ms, pricing %d ms)"
        % (report["totalTimeMs"], report["lpTimeMs"], report["pricingTimeMs"])
    )


def run_solve_pipeline(
    tree1_path: str,
    tree2_path: str,
    use_reduce: bool,
    config: bnp.SolveConfig,
    seed: Optional[int] = None,
) -> Dict:
    t1 = newick.read_tree_file(tree1_path)
    t2 = newick.read_tree_file(tree2_path)
    return solve_pair_report(t1, t2, use_reduce, config, seed)


def solve_pair_report(t1, t2, use_reduce, config, seed=None) -> Dict:
    start = time.perf_counter()
    if use_reduce:
        r1, r2, trace = redmod.reduce_pair(t1, t2)
    else:
        r1, r2, trace = t1, t2, redmod.ReductionTrace(())
    forest, stats = bnp.solve(r1, r2, config)
    blocks_labels = [
        frozenset(r1.taxa.label_of(t) for t in b) for b in forest.blocks
    ]
    if trace.steps:
        blocks_labels = redmod.lift_forest(blocks_labels, trace, t1, t2)
    stats.total_time = time.perf_counter() - start
    return _solve_report(
        _label_blocks(blocks_labels), stats, bool(trace.steps), seed
    )


def _cmd_solve(args) -> int:
    config = bnp.SolveConfig(
        epsilon=args.epsilon,
        strategy=args.strategy,
        time_limit=args.time_limit,
        variant=args.variant,
    )
    report = run_solve_pipeline(
        args.tree1, args.tree2, args.reduce, config
    )
    _print_report(report, args.json)
    return EXIT_OK if report["optimal"] else EXIT_TIME_LIMIT


def _cmd_gen(args) -> int:
    spec = genmod.GenSpec(args.taxa, args.skew, args.tbr, args.seed)
    t1, t2 = genmod.generate_pair(spec)
    newick.write_tree_file(args.out + ".tree1.nwk", t1)
    newick.write_tree_file(args.out + ".tree2.nwk", t2)
    with open(args.out + ".manifest", "w", encoding="utf-8") as fh:
        fh.write(f"{spec.t} {spec.s} {spec.k} {spec.seed}\n")
    return EXIT_OK


def _cmd_reduce(args) -> int:
    t1 = newick.read_tree_file(args.tree1)
    t2 = newick.read_tree_file(args.tree2)
    r1, r2, trace = redmod.reduce_pair(t1, t2)
    newick.write_tree_file(args.out + ".tree1.nwk", r1)
    newick.write_tree_file(args.out + ".tree2.nwk", r2)
    with open(args.out + ".trace", "w", encoding="utf-8") as fh:
        for step in trace.steps:
            fh.write(
                f"{step.kind} {','.join(step.replaced)} -> "
                f"{','.join(step.replacement)}\n"
            )
    print(
        f"reduced {t1.n} -> {r1.n} leaves in {len(trace.steps)} steps",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_oracle(args) -> int:
    t1 = newick.read_tree_file(args.tree1)
    t2 = newick.read_tree_file(args.tree2)
    start = time.perf_counter()
    result = oraclemod.brute_umaf(t1, t2)
    blocks = _label_blocks(
        [frozenset(t1.taxa.label_of(t) for t in b) for b in result.forest]
    )
    report = {
        "mafSize": result.size,
        "blocks": blocks,
        "method": "brute-force",
        "optimal": True,
        "totalTimeMs": int((time.perf_counter() - start) * 1000),
    }
    print(json.dumps(report))
    return EXIT_OK


def _bench_one(task) -> Dict:
    index, t, s, k, seed, use_reduce, epsilon, strategy, time_limit = task
    spec = genmod.GenSpec(t, s, k, seed)
    t1, t2 = genmod.generate_pair(spec)
    config = bnp.SolveConfig(
        epsilon=epsilon, strategy=strategy, time_limit=time_limit
    )
    report = solve_pair_report(t1, t2, use_reduce, config, seed=seed)
    report["instance"] = index
    report["t"] = t
    report["s"] = s
    report["k"] = k
    return report


def _cmd_bench(args) -> int:
    tasks = []
    with open(args.manifest, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                print(
                    f"manifest line {index + 1}: expected 't s k seed'",
                    file=sys.stderr,
                )
                return EXIT_USAGE
            t, s, k, seed = (int(p) for p in parts)
            tasks.append(
                (
                    len(tasks), t, s, k, seed,
                    args.reduce, args.epsilon, args.strategy, args.time_limit,
                )
            )
    hit_limit = False
    with open(args.out, "w", encoding="utf-8") as out:
        if args.jobs <= 1:
            for task in tasks:
                report = _bench_one(task)
                hit_limit |= not report["optimal"]
                out.write(json.dumps(report) + "\n")
        else:
            with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
                futures = [pool.submit(_bench_one, t) for t in tasks]
                for fut in concurrent.futures.as_completed(futures):
                    report = fut.result()
                    hit_limit |= not report["optimal"]
                    out.write(json.dumps(report) + "\n")
                    out.flush()
    return EXIT_TIME_LIMIT if hit_limit else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="umaf",
        description=(
            "Exact unrooted maximum agreement forest solver "
            "(branch-&-price)"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one tree pair")
    ps.add_argument("--tree1", required=True)
    ps.add_argument("--tree2", required=True)
    ps.add_argument("--reduce", action="store_true")
    ps.add_argument("--strategy", choices=("size", "ratio"), default="ratio")
    ps.add_argument("--epsilon", type=float, default=1e-3)
    ps.add_argument("--time-limit", type=float, default=300.0)
    ps.add_argument(
        "--variant", choices=("pinned", "paper"), default="pinned"
    )
    ps.add_argument("--json", action="store_true")
    ps.set_defaults(func=_cmd_solve)

    pg = sub.add_parser("gen", help="generate a tree pair")
    pg.add_argument("--taxa", type=int, required=True)
    pg.add_argument("--skew", type=int, required=True)
    pg.add_argument("--tbr", type=int, required=True)
    pg.add_argument("--seed", type=int, required=True)
    pg.add_argument("--out", required=True)
    pg.set_defaults(func=_cmd_gen)

    pr = sub.add_parser("reduce", help="apply data reduction")
    pr.add_argument("--tree1", required=True)
    pr.add_argument("--tree2", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=_cmd_reduce)

    po = sub.add_parser("oracle", help="brute-force solve (small instances)")
    po.add_argument("--tree1", required=True)
    po.add_argument("--tree2", required=True)
    po.set_defaults(func=_cmd_oracle)

    pb = sub.add_parser("bench", help="run a manifest of generated instances")
    pb.add_argument("--manifest", required=True)
    pb.add_argument("--out", required=True)
    pb.add_argument("--jobs", type=int, default=1)
    pb.add_argument("--reduce", action="store_true")
    pb.add_argument("--strategy", choices=("size", "ratio"), default="ratio")
    pb.add_argument("--epsilon", type=float, default=1e-3)
    pb.add_argument("--time-limit", type=float, default=300.0)
    pb.set_defaults(func=_cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (newick.NewickError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
