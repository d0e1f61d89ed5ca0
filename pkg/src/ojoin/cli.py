"""Operator surface.

Subcommands: run, bounds, verify-oblivious, cache-sim, bench, gen, trace.
Exit codes: 0 success, 2 parse/config error, 3 budget exceeded,
4 obliviousness verdict UNEQUAL.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction

import numpy as np

from .engine import STRATEGIES, plan_query, run_join
from .errors import (
    BudgetExceededError,
    BudgetOverflowError,
    InvalidArgumentError,
    OjoinError,
    QueryFormatError,
    SizeLimitError,
)
from .hypergraph import fractional_edge_cover, power_budget
from .memory import AccessTrace, CacheParams, simulate_cache, traces_equal
from .oracle import check_budget_report, gen_instance
from .qio import load_instance, load_query, write_instance, write_results_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_UNEQUAL = 4


def _parse_sizes(text):
    if "," in text or "=" in text:
        out = {}
        for part in text.split(","):
            eid, _, v = part.partition("=")
            out[eid.strip()] = int(v)
        return out
    return int(text)


def _add_common(p):
    p.add_argument("query", help="query JSON file")
    p.add_argument("--strategy", default="generic", choices=STRATEGIES)
    p.add_argument("--pad-to-n", action="store_true",
                   help="dummy-extend every relation to the instance total N")
    p.add_argument("--tau", type=int, default=None,
                   help="output bound for the relaxed decomposition strategy")


def cmd_run(args):
    qf = load_query(args.query)
    inst, dictionary = load_instance(qf)
    res = run_join(
        qf.query, inst, args.strategy, pad_to_n=args.pad_to_n, tau=args.tau,
        ghd=qf.ghd,
    )
    rel = res.relation
    print(f"query attrs: {', '.join(qf.query.attributes)}")
    print(f"N={inst.total_size} OUT={res.out_count} slots={rel.n} "
          f"events={res.ctx.trace.n_events}")
    report = check_budget_report(res.ctx.budget_log)
    if report.rows:
        worst = min(rec.slack for rec in report.rows)
        print(f"budget: calls={len(report.rows)} violations={report.violations} "
              f"min-slack={worst} max-true/tau={report.max_ratio:.4f}")
    if args.output:
        write_results_csv(args.output, rel.schema, rel.real_rows(), dictionary)
        print(f"wrote {res.out_count} rows to {args.output}")
    if args.trace_out:
        res.ctx.trace.export(args.trace_out)
        print(f"wrote trace ({res.ctx.trace.n_events} events) to {args.trace_out}")
    if args.digest_only or not args.output:
        print(f"digest={res.ctx.trace.digest}")
    return EXIT_OK


def cmd_bounds(args):
    qf = load_query(args.query)
    n = args.n
    plan = plan_query(qf.query, "generic", n)
    print(f"attributes: {', '.join(qf.query.attributes)}")
    for eid, attrs in qf.query.edges:
        print(f"edge {eid}: {{{', '.join(attrs)}}}")
    print(f"rho* = {plan.frac_cover.total}")
    for eid in qf.query.edge_ids:
        print(f"  W*({eid}) = {plan.frac_cover.weights[eid]}")
    print(f"rho  = {plan.int_cover.total}")
    print(f"N = {n}; tau = N^rho* = {plan.tau}")
    print("elimination order (I | J):")
    for i_attrs, j_attrs in plan.eliminations:
        print(f"  {{{', '.join(i_attrs)}}} | {{{', '.join(j_attrs)}}}")
    ghd_plan = plan_query(qf.query, "ghd-relaxed", n, ghd=qf.ghd)
    print(f"fhtw = {ghd_plan.fhtw} (decomposition {'from file' if qf.ghd else 'searched'})")
    for u in ghd_plan.ghd.nodes:
        bag = ghd_plan.ghd.bags[u]
        print(f"  bag {u}: {{{', '.join(bag)}}} rho*={ghd_plan.bag_taus[u]} "
              f"tau_bag={power_budget(n, ghd_plan.bag_taus[u])}")
    return EXIT_OK


def cmd_verify_oblivious(args):
    qf = load_query(args.query)
    if args.k < 2:
        raise InvalidArgumentError("need at least k=2 instances")
    digests = []
    traces = []
    profiles = []
    for i in range(args.k):
        inst = gen_instance(qf.query, args.profile, _parse_sizes(args.sizes),
                            seed=args.seed + i)
        profiles.append(inst.size_profile())
        res = run_join(qf.query, inst, args.strategy,
                       pad_to_n=args.mode == "pad-to-n", tau=args.tau, ghd=qf.ghd)
        traces.append(res.ctx.trace)
        digests.append(res.ctx.trace.digest)
    if any(p != profiles[0] for p in profiles):
        raise InvalidArgumentError(
            f"generated instances have unequal size profiles: {profiles}"
        )
    print(f"strategy={args.strategy} k={args.k} profile={args.profile} "
          f"sizes={profiles[0]} mode={args.mode}")
    for i, d in enumerate(digests):
        print(f"  instance {i} (seed {args.seed + i}): digest={d}")
    equal = True
    for i in range(1, args.k):
        eq, div = traces_equal(traces[0], traces[i])
        if not eq:
            equal = False
            print(f"UNEQUAL: instance 0 vs {i}: {div}")
            break
    if equal:
        print("EQUAL")
        return EXIT_OK
    return EXIT_UNEQUAL


def cmd_cache_sim(args):
    trace = AccessTrace.load(args.trace)
    params = CacheParams(m=args.m, b=args.b)
    transfers = simulate_cache(trace, params)
    events = trace.n_events
    ratio = transfers * args.b / events if events else 0.0
    print(f"events={events} M={args.m} B={args.b} transfers={transfers} "
          f"transfers*B/events={ratio:.4f}")
    return EXIT_OK


def cmd_bench(args):
    qf = load_query(args.query)
    query = qf.query
    grid = [int(v) for v in args.grid.split(",")]
    if grid != sorted(grid):
        raise InvalidArgumentError("grid must be ascending")
    m_edges = len(query.edges)
    rows = []
    print("n,events,transfers")
    for n in grid:
        sizes = {
            eid: n // m_edges + (1 if i < n % m_edges else 0)
            for i, eid in enumerate(query.edge_ids)
        }
        inst = gen_instance(query, args.profile, sizes, seed=args.seed)
        res = run_join(query, inst, args.strategy, tau=args.tau, ghd=qf.ghd)
        events = res.ctx.trace.n_events
        transfers = (
            simulate_cache(res.ctx.trace, CacheParams(m=args.m, b=args.b))
            if not args.no_cache_sim
            else -1
        )
        rows.append((n, events, transfers))
        print(f"{n},{events},{transfers}")
    rho = fractional_edge_cover(query).total
    if len(rows) >= 2:
        xs = np.log([r[0] for r in rows])
        ys = np.log([r[1] for r in rows])
        slope = float(np.polyfit(xs, ys, 1)[0])
        print(f"slope={slope:.4f} rho*={rho} (={float(rho):.4f})")
    else:
        print(f"slope=n/a rho*={rho}")
    if args.output:
        with open(args.output, "w") as f:
            f.write("n,events,transfers\n")
            for r in rows:
                f.write(f"{r[0]},{r[1]},{r[2]}\n")
    return EXIT_OK


def cmd_gen(args):
    qf = load_query(args.query)
    inst = gen_instance(qf.query, args.profile, _parse_sizes(args.sizes),
                        seed=args.seed, alpha=args.alpha)
    qpath = write_instance(inst, args.outdir, ghd=qf.ghd)
    print(f"wrote instance (N={inst.total_size}) under {args.outdir}")
    print(f"query file: {qpath}")
    return EXIT_OK


def cmd_trace(args):
    qf = load_query(args.query)
    inst, _dictionary = load_instance(qf)
    res = run_join(qf.query, inst, args.strategy, pad_to_n=args.pad_to_n,
                   tau=args.tau, ghd=qf.ghd)
    res.ctx.trace.export(args.out, max_events=args.max_events)
    print(f"events={res.ctx.trace.n_events} digest={res.ctx.trace.digest}")
    print(f"wrote {args.out} and {args.out}.digest")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ojoin",
        description="data-oblivious multi-way join engine with traced memory",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate a query and write results")
    _add_common(p)
    p.add_argument("--output", default=None, help="result CSV path")
    p.add_argument("--trace-out", default=None, help="export the access trace")
    p.add_argument("--digest-only", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bounds", help="print plan numbers (rho*, rho, fhtw, taus)")
    p.add_argument("query")
    p.add_argument("--n", type=int, default=1024, help="input size for budgets")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("verify-oblivious",
                       help="run k generated instances and compare traces")
    _add_common(p)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="32")
    p.add_argument("--profile", default="uniform",
                   choices=["uniform", "skewed", "heavy-hitter"])
    p.add_argument("--mode", default="per-relation-sizes",
                   choices=["per-relation-sizes", "pad-to-n"])
    p.set_defaults(fn=cmd_verify_oblivious)

    p = sub.add_parser("cache-sim", help="replay a trace through the LRU cache")
    p.add_argument("trace")
    p.add_argument("--m", type=int, required=True, help="cache capacity (elements)")
    p.add_argument("--b", type=int, required=True, help="block size (elements)")
    p.set_defaults(fn=cmd_cache_sim)

    p = sub.add_parser("bench", help="event/transfer scaling over an N grid")
    _add_common(p)
    p.add_argument("--grid", default="32,64,128,256,512,1024")
    p.add_argument("--profile", default="uniform", choices=["uniform", "skewed"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--b", type=int, default=16)
    p.add_argument("--no-cache-sim", action="store_true")
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gen", help="generate an instance for a query")
    p.add_argument("query")
    p.add_argument("--profile", default="uniform",
                   choices=["uniform", "skewed", "heavy-hitter", "agm-extremal"])
    p.add_argument("--sizes", default="32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.1, help="skew exponent")
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("trace", help="run a query and export its trace")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--max-events", type=int, default=1 << 27)
    p.set_defaults(fn=cmd_trace)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (QueryFormatError, InvalidArgumentError, SizeLimitError,
            BudgetOverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OjoinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
