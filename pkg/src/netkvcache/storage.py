"""Capacity-bounded key-value response store with write-invalidate coherence.

Keys are canonical byte encodings of scalar values, so two lookups agree
exactly when their encodings are byte-equal. Each key carries an epoch
counter, bumped on every invalidation; a fill must present the epoch
token it obtained at miss time, which rejects any fill that an
invalidation overtook while the server round trip was in flight.

All operations are linearizable: a single lock guards every mutation and
read, matching the exclusive acquire/release discipline the shared store
needs under many concurrent sessions.
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Any

CacheKey = bytes
FillToken = tuple[int, int]  # (key epoch, global epoch) at miss time

_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1


def canonical_key(value: Any) -> CacheKey | None:
    """Encode a scalar as type tag + little-endian payload, or None.

    Only scalars participate in key equality; documents, arrays, and
    anything else return None (the request then bypasses the cache).
    """
    if isinstance(value, bool):
        return b"\x08\x01" if value else b"\x08\x00"
    if isinstance(value, int):
        if _I32_MIN <= value <= _I32_MAX:
            return b"\x10" + struct.pack("<i", value)
        if -(2**63) <= value <= 2**63 - 1:
            return b"\x12" + struct.pack("<q", value)
        return None
    if isinstance(value, float):
        return b"\x01" + struct.pack("<d", value)
    if isinstance(value, str):
        return b"\x02" + value.encode("utf-8")
    if value is None:
        return b"\x0a"
    return None


class Policy(enum.Enum):
    """Behavior when a fill arrives at a full store."""

    NOEVICT = "noevict"
    FIFO = "fifo"
    LRU = "lru"

    @classmethod
    def parse(cls, name: str) -> "Policy":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; expected noevict, fifo, or lru") from None


class PutOutcome(enum.Enum):
    STORED = "stored"
    REJECTED_STALE = "rejected_stale"
    REJECTED_FULL = "rejected_full"


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    bypasses: int = 0
    invalidations: int = 0
    fills: int = 0
    rejected_fills: int = 0

    def copy(self) -> "CacheStats":
        return replace(self)


@dataclass(frozen=True)
class Hit:
    body: bytes


@dataclass(frozen=True)
class Miss:
    token: FillToken


@dataclass
class CacheEntry:
    body: bytes
    stored_at: float
    epoch_at_fill: int


class CacheStore:
    """Shared key -> response-body store, safe for concurrent sessions."""

    def __init__(self, capacity: int, policy: Policy = Policy.NOEVICT):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.policy = policy
        self._entries: OrderedDict[CacheKey, CacheEntry] = OrderedDict()
        self._epochs: dict[CacheKey, int] = {}
        self._global_epoch = 0
        self._stats = CacheStats()
        self._lock = threading.Lock()

    def get(self, key: CacheKey) -> Hit | Miss:
        """Look up a key; a miss returns the epoch token for the later fill."""
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                self._stats.hits += 1
                if self.policy is Policy.LRU:
                    self._entries.move_to_end(key)
                return Hit(entry.body)
            self._stats.misses += 1
            return Miss((self._epochs.get(key, 0), self._global_epoch))

    def put(self, key: CacheKey, body: bytes, token: FillToken) -> PutOutcome:
        """Conditionally store a response captured for an earlier miss.

        Stores only if no invalidation touched the key (or the whole
        store) since the miss that produced ``token``, and only if there
        is room — under NOEVICT a full store rejects the fill, under
        FIFO/LRU one resident entry is evicted to make room.
        """
        with self._lock:
            key_epoch = self._epochs.get(key, 0)
            if token != (key_epoch, self._global_epoch):
                self._stats.rejected_fills += 1
                return PutOutcome.REJECTED_STALE
            if key not in self._entries and len(self._entries) >= self.capacity:
                if self.policy is Policy.NOEVICT or self.capacity == 0:
                    self._stats.rejected_fills += 1
                    return PutOutcome.REJECTED_FULL
                self._entries.popitem(last=False)
            self._entries[key] = CacheEntry(body, time.monotonic(), key_epoch)
            if self.policy is Policy.LRU:
                self._entries.move_to_end(key)
            self._stats.fills += 1
            return PutOutcome.STORED

    def invalidate(self, key: CacheKey) -> None:
        """Drop a key and bump its epoch, rejecting any in-flight fill."""
        with self._lock:
            self._entries.pop(key, None)
            self._epochs[key] = self._epochs.get(key, 0) + 1
            self._stats.invalidations += 1

    def invalidate_all(self) -> None:
        """Drop everything and bump the global epoch."""
        with self._lock:
            removed = len(self._entries)
            self._entries.clear()
            self._global_epoch += 1
            self._stats.invalidations += removed

    def record_bypass(self) -> None:
        with self._lock:
            self._stats.bypasses += 1

    def snapshot_stats(self) -> CacheStats:
        with self._lock:
            return self._stats.copy()

    def entry_count(self) -> int:
        with self._lock:
            return len(self._entries)

    def resident_keys(self) -> list[CacheKey]:
        with self._lock:
            return list(self._entries.keys())
