"""TCP proxy front: accept clients, splice to the upstream server, and pump
messages through the flow classifier and cache engine in both directions.

One session per client connection (thread per leg); sessions share only
the cache store, whose operations are linearizable. Coordination traffic
is relayed byte-identically; manipulation traffic goes through the
engine, which may answer reads locally without contacting the server.
"""

from __future__ import annotations

import csv
import itertools
import logging
import signal
import socket
import threading
import time
from dataclasses import dataclass, field

from . import engine, flows, wire
from .storage import CacheStore, Policy

log = logging.getLogger(__name__)

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

STATS_CSV_COLUMNS = [
    "ts", "hits", "misses", "bypasses", "fills",
    "rejected_fills", "invalidations", "entries", "rps",
]


class BindFailure(RuntimeError):
    """The listen address could not be bound."""


class UpstreamUnavailable(RuntimeError):
    """The upstream server refused or timed out at session start."""


@dataclass
class ProxyConfig:
    listen: tuple[str, int]
    upstream: tuple[str, int]
    capacity: int
    policy: Policy = Policy.NOEVICT
    key_field: str = "_id"
    log_level: str = "info"
    stats_interval: float = 0.0
    stats_out: str | None = None
    max_message_bytes: int = wire.DEFAULT_MAX_MESSAGE_BYTES
    shutdown_grace: float = 5.0
    connect_timeout: float = 5.0


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be HOST:PORT, got {text!r}")
    return host, int(port)


def _configure_socket(sock: socket.socket) -> None:
    # Request/response ping-pong: never let Nagle hold a message back.
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class Session:
    """One client connection spliced to one upstream connection."""

    def __init__(self, proxy: "CacheProxy", client_sock: socket.socket, session_id: int):
        self.proxy = proxy
        self.session_id = session_id
        self.client_sock = client_sock
        _configure_socket(client_sock)
        cfg = proxy.config
        try:
            self.upstream_sock = socket.create_connection(
                cfg.upstream, timeout=cfg.connect_timeout
            )
        except OSError as exc:
            raise UpstreamUnavailable(f"cannot reach upstream {cfg.upstream}: {exc}") from exc
        self.upstream_sock.settimeout(None)
        _configure_socket(self.upstream_sock)

        self._client_r = client_sock.makefile("rb")
        self._client_w = client_sock.makefile("wb")
        self._upstream_r = self.upstream_sock.makefile("rb")
        self._upstream_w = self.upstream_sock.makefile("wb")
        self._downstream_lock = threading.Lock()
        self._close_lock = threading.Lock()
        self.closed = False
        self.pending = engine.PendingTable()
        self._id_counter = itertools.count(1)
        self._server_thread = threading.Thread(
            target=self._server_pump, name=f"session-{session_id}-server", daemon=True
        )

    # -- leg writers -----------------------------------------------------

    def _send_upstream(self, m: wire.RawMessage) -> None:
        wire.write_message(self._upstream_w, m)

    def _send_downstream(self, m: wire.RawMessage) -> None:
        with self._downstream_lock:
            wire.write_message(self._client_w, m)

    def relay_cf(self, m: wire.RawMessage, direction: flows.Direction) -> None:
        """Forward a coordination message unchanged to the opposite leg."""
        if direction is flows.Direction.FROM_CLIENT:
            self._send_upstream(m)
        else:
            self._send_downstream(m)

    def _next_response_id(self) -> int:
        return next(self._id_counter)

    # -- pumps -----------------------------------------------------------

    def run(self) -> None:
        """Pump both legs until either side closes; blocks the caller."""
        self._server_thread.start()
        try:
            self._client_pump()
        finally:
            self.close()
            self._server_thread.join(timeout=2.0)

    def _client_pump(self) -> None:
        cfg = self.proxy.config
        try:
            while not self.closed:
                m = wire.read_message(self._client_r, cfg.max_message_bytes)
                if flows.classify_client(m) is flows.FlowClass.COORDINATION:
                    self.relay_cf(m, flows.Direction.FROM_CLIENT)
                    continue
                cmd = engine.parse_command(m, cfg.key_field)
                log.debug("session %d: client %s key=%s",
                          self.session_id, cmd.kind.value, cmd.key)
                engine.handle_client(
                    cmd, self.proxy.store, self.pending,
                    self._send_upstream, self._send_downstream,
                    self._next_response_id,
                )
        except wire.ConnectionClosed:
            log.debug("session %d: client leg closed", self.session_id)
        except (wire.WireError, OSError, ValueError) as exc:
            if not self.closed:
                log.info("session %d: client leg error: %s", self.session_id, exc)

    def _server_pump(self) -> None:
        cfg = self.proxy.config
        try:
            while not self.closed:
                m = wire.read_message(self._upstream_r, cfg.max_message_bytes)
                engine.handle_server(
                    m, self.proxy.store, self.pending, self._send_downstream
                )
        except wire.ConnectionClosed:
            log.debug("session %d: server leg closed", self.session_id)
        except (wire.WireError, OSError, ValueError) as exc:
            if not self.closed:
                log.info("session %d: server leg error: %s", self.session_id, exc)
        finally:
            self.close()

    def close(self) -> None:
        with self._close_lock:
            if self.closed:
                return
            self.closed = True
        self.pending.drop_all()
        for sock in (self.client_sock, self.upstream_sock):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        self.proxy._session_done(self)


class StatsEmitter:
    """Periodic cache statistics records, kept in memory and/or as CSV."""

    def __init__(self, store: CacheStore, interval: float, path: str | None = None):
        if interval <= 0:
            raise ValueError("stats interval must be positive")
        self.store = store
        self.interval = interval
        self.path = path
        self.records: list[dict] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="stats-emitter", daemon=True)

    def start(self) -> "StatsEmitter":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=self.interval + 2.0)
        if self.path:
            self._write_csv()

    def _run(self) -> None:
        last = self.store.snapshot_stats()
        while not self._stop.wait(self.interval):
            now = self.store.snapshot_stats()
            requests = (now.hits + now.misses + now.bypasses) - (
                last.hits + last.misses + last.bypasses
            )
            self.records.append({
                "ts": time.time(),
                "hits": now.hits,
                "misses": now.misses,
                "bypasses": now.bypasses,
                "fills": now.fills,
                "rejected_fills": now.rejected_fills,
                "invalidations": now.invalidations,
                "entries": self.store.entry_count(),
                "rps": round(requests / self.interval, 3),
            })
            last = now

    def _write_csv(self) -> None:
        with open(self.path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=STATS_CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.records)


class CacheProxy:
    """The listening proxy; owns the shared store and all sessions."""

    def __init__(self, config: ProxyConfig):
        self.config = config
        self.store = CacheStore(config.capacity, config.policy)
        self._listener: socket.socket | None = None
        self._sessions: set[Session] = set()
        self._lock = threading.Lock()
        self._session_ids = itertools.count(1)
        self._accept_thread: threading.Thread | None = None
        self._stopped = threading.Event()
        self.stats_emitter: StatsEmitter | None = None

    @property
    def address(self) -> tuple[str, int]:
        if self._listener is None:
            raise RuntimeError("proxy not started")
        return self._listener.getsockname()[:2]

    def start(self) -> "CacheProxy":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind(self.config.listen)
            listener.listen(64)
        except OSError as exc:
            listener.close()
            raise BindFailure(f"cannot bind {self.config.listen}: {exc}") from exc
        self._listener = listener
        if self.config.stats_interval > 0:
            self.stats_emitter = StatsEmitter(
                self.store, self.config.stats_interval, self.config.stats_out
            ).start()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="proxy-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("listening on %s:%d, upstream %s:%d, capacity %d, policy %s",
                 *self.address, *self.config.upstream,
                 self.config.capacity, self.config.policy.value)
        return self

    def _accept_loop(self) -> None:
        while True:
            try:
                client_sock, peer = self._listener.accept()
            except OSError:
                return  # listener closed
            threading.Thread(
                target=self._session_main, args=(client_sock, peer),
                name="session-setup", daemon=True,
            ).start()

    def _session_main(self, client_sock: socket.socket, peer) -> None:
        session_id = next(self._session_ids)
        try:
            session = Session(self, client_sock, session_id)
        except UpstreamUnavailable as exc:
            # This session dies; the proxy keeps serving everyone else.
            log.error("session %d from %s: %s", session_id, peer, exc)
            client_sock.close()
            return
        with self._lock:
            self._sessions.add(session)
        log.info("session %d: %s connected", session_id, peer)
        session.run()
        log.info("session %d: done", session_id)

    def _session_done(self, session: Session) -> None:
        with self._lock:
            self._sessions.discard(session)

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def stop(self, grace: float | None = None) -> None:
        """Stop accepting, drain in-flight requests, then close sessions."""
        if self._listener is not None:
            # shutdown wakes the blocked accept(); close alone would not.
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._listener.close()
            except OSError:
                pass
        grace = self.config.shutdown_grace if grace is None else grace
        deadline = time.monotonic() + grace
        while time.monotonic() < deadline:
            with self._lock:
                busy = any(len(s.pending) > 0 for s in self._sessions)
            if not busy:
                break
            time.sleep(0.02)
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        if self.stats_emitter is not None:
            self.stats_emitter.stop()
        self._stopped.set()

    def wait(self) -> None:
        self._stopped.wait()


def run_proxy(config: ProxyConfig) -> int:
    """Run the proxy until SIGINT/SIGTERM; returns the process exit code."""
    logging.basicConfig(
        level=LOG_LEVELS.get(config.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        proxy = CacheProxy(config).start()
    except BindFailure as exc:
        log.error("%s", exc)
        return 1
    stop_requested = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop_requested.set())
    stop_requested.wait()
    log.info("shutting down (grace %.1fs)", config.shutdown_grace)
    proxy.stop()
    return 0
