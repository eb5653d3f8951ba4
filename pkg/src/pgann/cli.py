"""Command-line interface: build, search-sweep, gen-gt, gen-synthetic,
montecarlo.

Exit codes: 0 success, 2 usage error, 1 runtime error.  PGANN_THREADS
overrides the build thread count before any kernel runs; searches are
single-threaded regardless.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import bench
from .bench import BenchConfig, UsageError


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma list of ints")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", dest="dataset", help="base vectors (.fvecs/.ivecs/.bvecs)")
    p.add_argument("--synthetic", metavar="N:D[:DIST]",
                   help="generate base vectors instead of loading them")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pgann",
        description="proximity-graph ANN index builds, sweeps and experiments")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build an index and time it")
    _add_data_args(b)
    b.add_argument("--builder", default="fast-nsg", choices=bench.BUILDERS)
    b.add_argument("--k0", type=int, default=32, help="initial KNNG width")
    b.add_argument("--k", type=int, default=32, help="candidate list width")
    b.add_argument("--L", type=int, default=50, help="build-time search width")
    b.add_argument("--M", type=int, default=24, help="degree cap")
    b.add_argument("--alpha", type=float, default=66.0,
                   help="pruning angle in degrees, 60 keeps the bare rule")
    b.add_argument("--ef", type=int, default=64, help="layered beam width")
    b.add_argument("--iters", type=int, default=2,
                   help="refinement iterations for the fast builders")
    b.add_argument("--target-recall", type=float, default=None,
                   help="stop iterating once the sampled estimate reaches this")
    b.add_argument("--epsilon", type=float, default=0.6)
    b.add_argument("--l", type=float, default=1.0)
    b.add_argument("--m-factor", type=float, default=None,
                   help="layer assignment scale; default 1/ln(M)")
    b.add_argument("--knng-iters", type=int, default=10)
    b.add_argument("--no-connect", dest="connect", action="store_false",
                   help="skip the connectivity repair pass")
    b.add_argument("--no-cache", dest="cache", action="store_false",
                   help="disable cross-iteration computation reuse")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="index file to write")
    b.add_argument("--report", help="JSON report path")

    s = sub.add_parser("search-sweep", help="recall/QPS sweep over L values")
    s.add_argument("--data", dest="dataset", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--truth", help="exact-kNN .ivecs table for recall")
    s.add_argument("--k", dest="k_query", type=int, default=10)
    s.add_argument("--L", dest="L_search", type=_int_list, required=True,
                   metavar="L1,L2,...", help="search widths to sweep")
    s.add_argument("--report", help="JSON report path")
    s.add_argument("--csv", help="CSV export path for the sweep rows")

    g = sub.add_parser("gen-gt", help="write an exact-kNN truth table")
    g.add_argument("--data", dest="dataset", required=True)
    g.add_argument("--queries", required=True)
    g.add_argument("--k", dest="k_query", type=int, default=10)
    g.add_argument("--out", required=True, help=".ivecs path to write")
    g.add_argument("--quiet", action="store_true",
                   help="suppress progress lines on stderr")

    y = sub.add_parser("gen-synthetic", help="write a synthetic .fvecs file")
    y.add_argument("--n", type=int, required=True)
    y.add_argument("--d", type=int, required=True)
    y.add_argument("--dist", default="uniform",
                   choices=("uniform", "gaussian", "clustered"))
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)

    m = sub.add_parser("montecarlo", help="geometry and sampling experiments")
    m.add_argument("--experiment", required=True,
                   choices=("prune-rank", "prune-angle", "sample-coverage"))
    m.add_argument("--alpha", type=float, default=90.0)
    m.add_argument("--trials", type=int, default=100_000)
    m.add_argument("--point-dim", type=int, default=None,
                   help="also report the point-sampled angle at this dimension")
    m.add_argument("--n", type=int, default=5000)
    m.add_argument("--d", type=int, default=16)
    m.add_argument("--epsilon", type=float, default=0.6)
    m.add_argument("--l", type=float, default=1.0)
    m.add_argument("--resamples", type=int, default=500)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--report", help="JSON report path")

    return p


def _config_from(args: argparse.Namespace) -> BenchConfig:
    cfg = BenchConfig()
    for name in vars(cfg):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "L_search", None):
        cfg.L_search = tuple(args.L_search)
    return cfg


def _apply_thread_env() -> None:
    raw = os.environ.get("PGANN_THREADS")
    if not raw:
        return
    try:
        want = int(raw)
    except ValueError:
        raise UsageError(f"PGANN_THREADS={raw!r} is not an integer")
    if want < 1:
        raise UsageError("PGANN_THREADS must be >= 1")
    import numba

    numba.set_num_threads(min(want, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_env()
        if args.command == "build":
            report = bench.cmd_build(_config_from(args))
        elif args.command == "search-sweep":
            report = bench.cmd_search_sweep(_config_from(args))
        elif args.command == "gen-gt":
            cfg = _config_from(args)
            cfg.out = args.out
            report = bench.cmd_gen_gt(cfg, progress=not args.quiet)
        elif args.command == "gen-synthetic":
            report = bench.cmd_gen_synthetic(args.n, args.d, args.dist,
                                             args.seed, args.out)
        else:
            report = bench.cmd_montecarlo(
                args.experiment, alpha=args.alpha, trials=args.trials,
                seed=args.seed, point_dim=args.point_dim, n=args.n,
                d=args.d, epsilon=args.epsilon, l=args.l,
                resamples=args.resamples)
            if args.report is not None:
                bench.write_report(args.report, report)
    except UsageError as exc:
        print(f"pgann: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"pgann: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
