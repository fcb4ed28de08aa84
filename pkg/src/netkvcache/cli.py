"""Command-line entry point for the caching proxy."""

from __future__ import annotations

import argparse
import sys

from .proxy import LOG_LEVELS, ProxyConfig, parse_address, run_proxy
from .storage import Policy
from .wire import DEFAULT_MAX_MESSAGE_BYTES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netkv-cache",
        description="Transparent caching proxy for a key-value wire protocol.",
    )
    parser.add_argument("--listen", required=True, metavar="HOST:PORT",
                        help="address to accept client connections on")
    parser.add_argument("--upstream", required=True, metavar="HOST:PORT",
                        help="address of the key-value server")
    parser.add_argument("--capacity", required=True, type=int, metavar="N",
                        help="maximum number of cached entries (0 disables caching)")
    parser.add_argument("--policy", default="noevict",
                        choices=[p.value for p in Policy],
                        help="replacement behavior at capacity (default: noevict)")
    parser.add_argument("--key-field", default="_id", metavar="NAME",
                        help="document field treated as the unique key (default: _id)")
    parser.add_argument("--log-level", default="info", choices=sorted(LOG_LEVELS),
                        help="log verbosity (default: info)")
    parser.add_argument("--stats-interval", default=0.0, type=float, metavar="SECS",
                        help="seconds between statistics records; 0 disables (default: 0)")
    parser.add_argument("--stats-out", default=None, metavar="FILE.csv",
                        help="write periodic statistics to this CSV file")
    parser.add_argument("--max-message-bytes", default=DEFAULT_MAX_MESSAGE_BYTES,
                        type=int, metavar="N",
                        help="reject messages larger than this (default: 16 MiB)")
    parser.add_argument("--shutdown-grace", default=5.0, type=float, metavar="SECS",
                        help="drain period before sessions are closed on shutdown")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.capacity < 0:
        print("error: --capacity must be >= 0", file=sys.stderr)
        return 2
    config = ProxyConfig(
        listen=parse_address(args.listen),
        upstream=parse_address(args.upstream),
        capacity=args.capacity,
        policy=Policy.parse(args.policy),
        key_field=args.key_field,
        log_level=args.log_level,
        stats_interval=args.stats_interval,
        stats_out=args.stats_out,
        max_message_bytes=args.max_message_bytes,
        shutdown_grace=args.shutdown_grace,
    )
    return run_proxy(config)


if __name__ == "__main__":
    sys.exit(main())
