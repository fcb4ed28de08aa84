"""One-way-delay link emulation over TCP, at message granularity.

Each accepted connection is spliced to the target with two relay
directions. A reader thread stamps every message with its arrival time;
a writer thread delivers it no earlier than ``oneway_ms`` later. The
queue between them preserves order and lets back-to-back messages
overlap their delays, as a real long link would.
"""

from __future__ import annotations

import collections
import logging
import random
import socket
import threading
import time

from .. import wire

log = logging.getLogger(__name__)

_CLOSE = object()  # sentinel: source side finished

# time.sleep() on a loaded box overshoots by hundreds of microseconds,
# which would swamp sub-10ms emulated delays. Sleep coarsely to within
# this margin of the deadline, then yield-spin the final stretch.
_SPIN_WINDOW_S = 0.002


def _sleep_until(deadline: float) -> None:
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        time.sleep(remaining - _SPIN_WINDOW_S if remaining > _SPIN_WINDOW_S else 0)


class _Relay:
    """One direction of a spliced connection."""

    def __init__(self, name: str, src: socket.socket, dst: socket.socket,
                 oneway_s: float, jitter_s: float, rng: random.Random,
                 max_message_bytes: int):
        self.name = name
        self.src = src
        self.dst = dst
        self.oneway_s = oneway_s
        self.jitter_s = jitter_s
        self.rng = rng
        self.max_message_bytes = max_message_bytes
        self._queue: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self.threads = [
            threading.Thread(target=self._read_loop, name=f"{name}-read", daemon=True),
            threading.Thread(target=self._write_loop, name=f"{name}-write", daemon=True),
        ]

    def start(self) -> None:
        for t in self.threads:
            t.start()

    def _read_loop(self) -> None:
        rfile = self.src.makefile("rb")
        try:
            while True:
                m = wire.read_message(rfile, self.max_message_bytes)
                delay = self.oneway_s
                if self.jitter_s > 0:
                    delay += self.rng.uniform(0, self.jitter_s)
                self._enqueue((time.perf_counter() + delay, m))
        except (wire.WireError, OSError, ValueError):
            pass
        finally:
            self._enqueue(_CLOSE)

    def _enqueue(self, item) -> None:
        with self._cond:
            self._queue.append(item)
            self._cond.notify()

    def _write_loop(self) -> None:
        wfile = self.dst.makefile("wb")
        try:
            while True:
                with self._cond:
                    while not self._queue:
                        self._cond.wait()
                    item = self._queue.popleft()
                if item is _CLOSE:
                    break
                deliver_at, m = item
                _sleep_until(deliver_at)
                wire.write_message(wfile, m)
        except (wire.ConnectionClosed, OSError, ValueError):
            pass
        finally:
            # Propagate end-of-stream; the reverse direction keeps going
            # until its own source closes.
            try:
                self.dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass


class DelayPipe:
    """TCP forwarder adding a fixed one-way delay in each direction."""

    def __init__(
        self,
        target: tuple[str, int],
        oneway_ms: float,
        listen: tuple[str, int] = ("127.0.0.1", 0),
        jitter_ms: float = 0.0,
        seed: int = 0,
        max_message_bytes: int = wire.DEFAULT_MAX_MESSAGE_BYTES,
    ):
        if oneway_ms < 0:
            raise ValueError("oneway_ms must be >= 0")
        self.target = target
        self.oneway_s = oneway_ms / 1000.0
        self.jitter_s = jitter_ms / 1000.0
        self.listen = listen
        self.max_message_bytes = max_message_bytes
        self._rng = random.Random(seed)
        self._listener: socket.socket | None = None
        self._socks: list[socket.socket] = []
        self._lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def start(self) -> "DelayPipe":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(self.listen)
        listener.listen(64)
        self._listener = listener
        threading.Thread(target=self._accept_loop, name="pipe-accept", daemon=True).start()
        return self

    def stop(self) -> None:
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        with self._lock:
            socks = list(self._socks)
        for sock in socks:
            try:
                sock.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        while True:
            try:
                near, _ = self._listener.accept()
            except OSError:
                return
            try:
                far = socket.create_connection(self.target, timeout=5.0)
            except OSError as exc:
                log.error("pipe cannot reach %s: %s", self.target, exc)
                near.close()
                continue
            for sock in (near, far):
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._socks += [near, far]
            _Relay("fwd", near, far, self.oneway_s, self.jitter_s,
                   self._rng, self.max_message_bytes).start()
            _Relay("rev", far, near, self.oneway_s, self.jitter_s,
                   self._rng, self.max_message_bytes).start()


def delay_pipe(target: tuple[str, int], oneway_ms: float, **kwargs) -> DelayPipe:
    """Start a delay pipe in front of ``target``; caller stops it."""
    return DelayPipe(target, oneway_ms, **kwargs).start()
