"""``tcc-bench``: run a workload and print one CSV row.

CSV goes to standard output, a readable summary to standard error.  The
``verify`` workload runs oracle-checked rounds instead and exits non-zero if
any round fails.
"""

import argparse
import sys

from .driver import CSV_HEADER, BenchSpec, run_bench, run_verify
from .workloads import WORKLOADS


def build_parser():
    p = argparse.ArgumentParser(prog="tcc-bench", description=__doc__.splitlines()[0])
    p.add_argument("--workload", required=True, choices=sorted(WORKLOADS) + ["verify"])
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default 1, or 4 for verify)")
    p.add_argument("--duration-secs", type=float, default=5.0)
    p.add_argument("--ops-per-txn", type=int, default=None,
                   help="operations per transaction (workload default if omitted)")
    p.add_argument("--mode", choices=("basic", "extended"), default="basic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block-size", type=int, default=4096)
    p.add_argument("--log", choices=("off", "full"), default="off",
                   help="record the schedule event log")
    p.add_argument("--log-file", help="write the schedule log here (implies --log full)")
    p.add_argument("--warmup-secs", type=float, default=1.0)
    p.add_argument("--txns-per-worker", type=int, default=None,
                   help="run a fixed number of transactions per worker instead of a timed run")
    p.add_argument("--reads", type=int, default=None, help="corner-case scattered reads per op")
    p.add_argument("--region", type=int, default=None, help="corner-case region size in blocks")
    p.add_argument("--long-fraction", type=float, default=None,
                   help="mixed-ops share of 100-record updates")
    p.add_argument("--switch-interval", type=float, default=None,
                   help="interpreter thread switch interval during the run, seconds")
    p.add_argument("--rounds", type=int, default=100, help="verify rounds")
    p.add_argument("--fault", choices=("skip-counter-check",), default=None,
                   help="verify against a deliberately broken scheduler")
    p.add_argument("--no-header", action="store_true", help="omit the CSV header line")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is None:
        args.workers = 4 if args.workload == "verify" else 1
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    if args.duration_secs <= 0:
        parser.error("--duration-secs must be positive")
    if args.block_size < 64:
        parser.error("--block-size must be >= 64")

    if args.workload == "verify":
        if args.rounds < 1:
            parser.error("--rounds must be >= 1")
        report = run_verify(args.mode, rounds=args.rounds, seed=args.seed,
                            workers=args.workers, fault=args.fault)
        print(report.summary(), file=sys.stderr)
        for r in report.rounds:
            if not (r.ok and (args.mode == "extended" or r.conflict_ok)):
                print(f"round {r.round} failed: conflict={r.conflict_ok} view={r.view_ok} "
                      f"replay={r.replay_order} structure={r.structure_problems}",
                      file=sys.stderr)
        print("mode,rounds,passed,failed")
        print(f"{args.mode},{len(report.rounds)},{report.passed},{report.failed}")
        return 0 if report.failed == 0 else 1

    options = {}
    for flag, key in (("reads", "reads"), ("region", "region"),
                      ("long_fraction", "long_fraction"), ("switch_interval", "switch_interval")):
        value = getattr(args, flag)
        if value is not None:
            options[key] = value
    log = "full" if args.log_file else args.log
    try:
        spec = BenchSpec(args.workload, args.workers, args.duration_secs, args.ops_per_txn,
                         args.mode, args.seed, args.block_size, log, args.warmup_secs,
                         args.txns_per_worker, options)
    except ValueError as exc:
        parser.error(str(exc))
    report = run_bench(spec)
    if not args.no_header:
        print(CSV_HEADER)
    print(report.csv_row())
    print(report.summary(), file=sys.stderr)
    if args.log_file:
        report.engine.log.dump(args.log_file)
    return 0


if __name__ == "__main__":
    sys.exit(main())
