"""Scenario orchestration: wire client, delay links, proxy, and mock
server together on one host, run the workload, and emit result files.

The built-in scenarios model three geographic layouts with one-way
delays per link (milliseconds, full scale):

    A        0.25 / 0.25   everything close together
    B-ohio   0.25 / 82     cache next to the client, server remote
    B-tokyo  0.25 / 146
    C-ohio   10   / 72     client, cache, and server all apart
    C-tokyo  10   / 136

The direct (no-cache) path for a spec is the same two links end to end.
A ``time_scale`` divisor shrinks delays for quick runs while preserving
their ratios; a link whose scaled delay is exactly zero is wired as a
plain connection (no emulated distance, no relay process).
"""

from __future__ import annotations

import csv
import logging
from contextlib import ExitStack
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..proxy import CacheProxy, ProxyConfig, StatsEmitter
from ..storage import Policy
from .delay import DelayPipe
from .mockserver import MockKVServer
from .workload import MetricsReport, WorkloadConfig, key_sequence, run_workload, simulate_outcomes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DelaySpec:
    client_cache_oneway_ms: float
    cache_server_oneway_ms: float

    @property
    def direct_oneway_ms(self) -> float:
        return self.client_cache_oneway_ms + self.cache_server_oneway_ms


SCENARIO_DELAYS: dict[str, DelaySpec] = {
    "A": DelaySpec(0.25, 0.25),
    "B-ohio": DelaySpec(0.25, 82.0),
    "B-tokyo": DelaySpec(0.25, 146.0),
    "C-ohio": DelaySpec(10.0, 72.0),
    "C-tokyo": DelaySpec(10.0, 136.0),
}


@dataclass
class ScenarioConfig:
    name: str = "custom"
    delays: DelaySpec = field(default_factory=lambda: DelaySpec(0.0, 0.0))
    capacity: int = 100
    policy: Policy = Policy.NOEVICT
    keyspace: int = 100
    batches: int = 30
    per_batch: int = 1000
    with_cache: bool = True
    time_scale: float = 1.0
    seed: int = 42
    doc_size: int = 200
    server_seed: int = 1234
    stats_interval: float = 1.0
    out_dir: str | None = None

    @classmethod
    def named(cls, name: str, **overrides) -> "ScenarioConfig":
        if name not in SCENARIO_DELAYS:
            raise ValueError(
                f"unknown scenario {name!r}; choose from {sorted(SCENARIO_DELAYS)} or build a custom config"
            )
        return cls(name=name, delays=SCENARIO_DELAYS[name], **overrides)

    @property
    def scaled_delays(self) -> DelaySpec:
        return DelaySpec(
            self.delays.client_cache_oneway_ms / self.time_scale,
            self.delays.cache_server_oneway_ms / self.time_scale,
        )

    def workload(self) -> WorkloadConfig:
        # Per-request timeout: ten times the expected round trip, floored
        # so near-zero-delay runs are not trigger-happy.
        expected_rtt_s = 2 * self.scaled_delays.direct_oneway_ms / 1000.0
        return WorkloadConfig(
            batches=self.batches,
            per_batch=self.per_batch,
            keyspace=self.keyspace,
            seed=self.seed,
            request_timeout_s=max(1.0, 10 * expected_rtt_s),
        )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    report: MetricsReport

    @property
    def label(self) -> str:
        mode = f"capacity {self.config.capacity}" if self.config.with_cache else "no cache"
        return f"{self.config.name} ({mode})"


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run one scenario cell end to end and collect its metrics."""
    delays = cfg.scaled_delays
    stats_rows = None
    with ExitStack() as stack:
        server = MockKVServer(
            keyspace=cfg.keyspace, seed=cfg.server_seed, doc_size=cfg.doc_size
        ).start()
        stack.callback(server.stop)
        upstream = server.address

        if delays.cache_server_oneway_ms > 0:
            pipe2 = DelayPipe(upstream, delays.cache_server_oneway_ms).start()
            stack.callback(pipe2.stop)
            upstream = pipe2.address

        proxy = None
        if cfg.with_cache:
            proxy = CacheProxy(ProxyConfig(
                listen=("127.0.0.1", 0),
                upstream=upstream,
                capacity=cfg.capacity,
                policy=cfg.policy,
                shutdown_grace=1.0,
            )).start()
            stack.callback(proxy.stop)
            upstream = proxy.address
            if cfg.stats_interval > 0:
                emitter = StatsEmitter(proxy.store, cfg.stats_interval).start()
                stack.callback(emitter.stop)

        if delays.client_cache_oneway_ms > 0:
            pipe1 = DelayPipe(upstream, delays.client_cache_oneway_ms).start()
            stack.callback(pipe1.stop)
            upstream = pipe1.address

        workload_cfg = cfg.workload()
        outcomes = None
        if cfg.with_cache:
            outcomes = simulate_outcomes(
                key_sequence(workload_cfg), cfg.capacity, cfg.policy.value
            )
        report = run_workload(upstream, workload_cfg, outcomes)

        if proxy is not None:
            stats = proxy.store.snapshot_stats()
            report.store_stats = vars(stats).copy()
            report.store_entries = proxy.store.entry_count()
            counts = report.outcome_counts()
            report.reconciled = (
                stats.hits == counts.get("hit", 0)
                and stats.misses == counts.get("miss", 0)
            )
            if not report.reconciled:
                log.warning(
                    "%s: simulated outcomes disagree with store counters "
                    "(sim hit/miss %d/%d, store %d/%d)",
                    cfg.name, counts.get("hit", 0), counts.get("miss", 0),
                    stats.hits, stats.misses,
                )
        if cfg.with_cache and cfg.stats_interval > 0:
            stats_rows = emitter.records

    result = ScenarioResult(cfg, report)
    if cfg.out_dir:
        write_outputs(Path(cfg.out_dir), result, stats_rows)
    return result


def write_outputs(out_dir: Path, result: ScenarioResult, stats_rows=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = result.report

    with open(out_dir / "requests.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seq", "key", "outcome", "latency_ms"])
        for r in report.records:
            writer.writerow([r.seq, r.key, r.outcome, f"{r.latency_ms:.3f}"])

    with open(out_dir / "throughput.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["second", "rps"])
        for second, count in report.throughput_series():
            writer.writerow([second, count])

    with open(out_dir / "stats.csv", "w", newline="") as f:
        columns = ["ts", "hits", "misses", "bypasses", "fills",
                   "rejected_fills", "invalidations", "entries", "rps"]
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(stats_rows or [])

    (out_dir / "summary.txt").write_text(summarize_single(result))


def summarize_single(result: ScenarioResult) -> str:
    cfg, report = result.config, result.report
    counts = report.outcome_counts()
    lines = [
        f"scenario: {result.label}",
        f"delays (one-way ms, scaled /{cfg.time_scale:g}): "
        f"client-cache {cfg.scaled_delays.client_cache_oneway_ms:g}, "
        f"cache-server {cfg.scaled_delays.cache_server_oneway_ms:g}",
        f"requests: {len(report.records)} "
        f"({cfg.batches} batches x {cfg.per_batch}, keys 1..{cfg.keyspace}, seed {cfg.seed})",
        f"latency ms: mean {report.mean():.2f}  median {report.median():.2f}  "
        f"p95 {report.percentile(95):.2f}  p99 {report.percentile(99):.2f}",
        f"post-warm-up mean (final 80%): {report.post_warmup_mean():.2f} ms",
        f"throughput: overall {report.overall_rps():.1f} rps, "
        f"steady state {report.steady_state_rps():.1f} rps",
        f"outcomes: {counts}",
        f"timeouts: {report.timeouts}",
    ]
    if report.store_stats is not None:
        lines.append(f"store stats: {report.store_stats} entries={report.store_entries}")
        lines.append(f"reconciled with labels: {report.reconciled}")
    return "\n".join(lines) + "\n"


@dataclass
class SweepResult:
    scenario: str
    baseline: ScenarioResult
    cells: list[ScenarioResult]  # one per capacity, ascending


def run_capacity_sweep(
    base: ScenarioConfig, capacities: list[int], out_root: str | None = None
) -> SweepResult:
    """Run a no-cache baseline plus one cell per capacity."""
    def cell_dir(tag: str) -> str | None:
        return str(Path(out_root) / tag) if out_root else None

    baseline = run_scenario(replace(
        base, with_cache=False, out_dir=cell_dir("no-cache")
    ))
    cells = [
        run_scenario(replace(
            base, with_cache=True, capacity=c, out_dir=cell_dir(f"capacity-{c}")
        ))
        for c in sorted(capacities)
    ]
    return SweepResult(base.name, baseline, cells)


def summarize(sweep: SweepResult) -> str:
    """Capacity-sweep grid: mean latency per cell plus improvement row."""
    direct_mean = sweep.baseline.report.mean()
    header = ["scenario", "no cache"] + [
        f"cap {c.config.capacity}" for c in sweep.cells
    ]
    means = [f"{direct_mean:.2f} ms"] + [
        f"{c.report.mean():.2f} ms" for c in sweep.cells
    ]
    improvements = ["-"] + [
        f"{(1 - c.report.mean() / direct_mean) * 100:+.1f}%" for c in sweep.cells
    ]
    rps = [f"{sweep.baseline.report.overall_rps():.1f}"] + [
        f"{c.report.overall_rps():.1f}" for c in sweep.cells
    ]
    rows = [
        header,
        [sweep.scenario + " mean"] + means,
        ["improvement"] + improvements,
        ["rps"] + rps,
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows
    ) + "\n"
