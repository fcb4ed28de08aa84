"""Command-line entry point for the emulation lab."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from ..proxy import parse_address
from ..storage import Policy
from .mockserver import MockKVServer
from .scenario import (
    SCENARIO_DELAYS,
    DelaySpec,
    ScenarioConfig,
    run_capacity_sweep,
    run_scenario,
    summarize,
    summarize_single,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", default="B-ohio",
                        choices=sorted(SCENARIO_DELAYS) + ["custom"],
                        help="delay layout to emulate (default: B-ohio)")
    parser.add_argument("--delays", default=None, metavar="D1,D2",
                        help="custom one-way delays ms (client-cache,cache-server); "
                             "required with --scenario custom")
    parser.add_argument("--keyspace", default=100, type=int)
    parser.add_argument("--batches", default=30, type=int)
    parser.add_argument("--per-batch", default=1000, type=int)
    parser.add_argument("--policy", default="noevict",
                        choices=[p.value for p in Policy])
    parser.add_argument("--time-scale", default=1.0, type=float, metavar="D",
                        help="divide all delays by D (default: 1, full scale)")
    parser.add_argument("--seed", default=42, type=int)
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="write summary.txt, requests.csv, throughput.csv, stats.csv here")


def _config_from(args, capacity: int, with_cache: bool, out_dir=None) -> ScenarioConfig:
    if args.scenario == "custom":
        if not args.delays:
            raise SystemExit("--scenario custom requires --delays D1,D2")
        d1, d2 = (float(x) for x in args.delays.split(","))
        delays = DelaySpec(d1, d2)
    else:
        delays = SCENARIO_DELAYS[args.scenario]
    return ScenarioConfig(
        name=args.scenario,
        delays=delays,
        capacity=capacity,
        policy=Policy.parse(args.policy),
        keyspace=args.keyspace,
        batches=args.batches,
        per_batch=args.per_batch,
        with_cache=with_cache,
        time_scale=args.time_scale,
        seed=args.seed,
        out_dir=out_dir,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netlab",
        description="Desk-scale latency lab for the caching proxy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario cell")
    _add_common(run)
    run.add_argument("--capacity", default=100, type=int)
    run.add_argument("--no-cache", action="store_true",
                     help="measure the direct path instead of the cached one")

    sweep = sub.add_parser("sweep", help="run a capacity sweep plus no-cache baseline")
    _add_common(sweep)
    sweep.add_argument("--capacities", default="10,30,70,100", metavar="LIST",
                       help="comma-separated capacities (default: 10,30,70,100)")

    mock = sub.add_parser("mock-server", help="run the mock key-value server standalone")
    mock.add_argument("--listen", required=True, metavar="HOST:PORT")
    mock.add_argument("--keys", default=100, type=int)
    mock.add_argument("--seed", default=1234, type=int)
    mock.add_argument("--doc-size", default=200, type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    if args.command == "mock-server":
        server = MockKVServer(
            listen=parse_address(args.listen), keyspace=args.keys,
            seed=args.seed, doc_size=args.doc_size,
        ).start()
        print(f"mock server on {server.address[0]}:{server.address[1]} "
              f"with keys 1..{args.keys}; Ctrl-C to stop")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            server.stop()
        return 0

    if args.command == "run":
        cfg = _config_from(args, args.capacity, not args.no_cache, args.out)
        result = run_scenario(cfg)
        print(summarize_single(result), end="")
        return 0

    if args.command == "sweep":
        capacities = [int(c) for c in args.capacities.split(",")]
        cfg = _config_from(args, capacities[0], True)
        sweep_result = run_capacity_sweep(cfg, capacities, args.out)
        print(summarize(sweep_result), end="")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
