"""Per-session cache engine: command parsing and the two message handlers.

The client handler short-circuits cacheable reads (a hit answers the
client locally and nothing goes upstream), tracks forwarded misses so
their responses can be captured, and applies write-invalidate before
forwarding writes. The server handler fills the store from tracked read
responses and always forwards the original bytes downstream.

Writes are tracked in the pending table too: when a write's
acknowledgment comes back, the key is invalidated a second time. This
closes the window where a concurrent read, forwarded after the
invalidation but served by the server before the write applied, could
re-fill the store with the overwritten value.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from .storage import CacheKey, CacheStore, FillToken, Hit, canonical_key
from .wire import (
    HEADER_PREFIX_SIZE,
    MANIPULATION_OPCODE,
    MalformedDocument,
    MessageHeader,
    RawMessage,
    decode_document,
)


class CommandKind(enum.Enum):
    FIND = "find"
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"
    BYPASS = "bypass"


_KEYWORD_KINDS = {
    "find": CommandKind.FIND,
    "insert": CommandKind.INSERT,
    "update": CommandKind.UPDATE,
    "delete": CommandKind.DELETE,
}


@dataclass(frozen=True)
class Command:
    """A parsed manipulation request.

    ``key`` is set only when a unique-key equality filter was extracted;
    insert never carries one, and anything unparseable degrades to
    BYPASS with the raw message untouched.
    """

    kind: CommandKind
    key: CacheKey | None
    collection: str
    raw: RawMessage


class PendingKind(enum.Enum):
    FIND_FILL = "find_fill"   # a forwarded read miss awaiting its response
    WRITE_KEY = "write_key"   # a forwarded keyed write awaiting its ack
    WRITE_ALL = "write_all"   # a forwarded unkeyed write awaiting its ack


@dataclass(frozen=True)
class PendingEntry:
    kind: PendingKind
    key: CacheKey | None
    token: FillToken | None
    issued_at: float


class PendingTable:
    """Session-local map of forwarded request ids awaiting responses."""

    def __init__(self):
        self._entries: dict[int, PendingEntry] = {}
        self._lock = threading.Lock()

    def track_find(self, request_id: int, key: CacheKey, token: FillToken) -> None:
        with self._lock:
            self._entries[request_id] = PendingEntry(
                PendingKind.FIND_FILL, key, token, time.monotonic()
            )

    def track_write(self, request_id: int, key: CacheKey | None) -> None:
        kind = PendingKind.WRITE_KEY if key is not None else PendingKind.WRITE_ALL
        with self._lock:
            self._entries[request_id] = PendingEntry(kind, key, None, time.monotonic())

    def contains(self, request_id: int) -> bool:
        with self._lock:
            return request_id in self._entries

    def take(self, request_id: int) -> PendingEntry | None:
        """Atomically remove and return the entry, or None if untracked."""
        with self._lock:
            return self._entries.pop(request_id, None)

    def drop_all(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def extract_key(filter_doc: Any, key_field: str = "_id") -> CacheKey | None:
    """Extract the unique-key equality value from a filter document.

    Recognizes exactly ``{key_field: scalar}`` and
    ``{key_field: {"$eq": scalar}}`` with no other fields present; range
    operators, compound filters, and non-scalar values return None.
    """
    if not isinstance(filter_doc, dict) or len(filter_doc) != 1:
        return None
    value = filter_doc.get(key_field)
    if value is None and key_field not in filter_doc:
        return None
    if isinstance(value, dict):
        if len(value) != 1 or "$eq" not in value:
            return None
        value = value["$eq"]
        if isinstance(value, dict):
            return None
    return canonical_key(value)


def _statement_key(body: dict, field: str, key_field: str) -> tuple[CacheKey | None, bool]:
    """Key from a write's single statement list; (None, False) if multi-statement."""
    statements = body.get(field)
    if not isinstance(statements, list) or len(statements) != 1:
        return None, False
    statement = statements[0]
    if not isinstance(statement, dict):
        return None, False
    return extract_key(statement.get("q"), key_field), True


def parse_command(m: RawMessage, key_field: str = "_id") -> Command:
    """Parse a manipulation-flow message into a Command.

    Degenerate input never raises: undecodable bodies, unknown shapes,
    and multi-statement writes all come back as BYPASS.
    """
    try:
        body = decode_document(m.body)
    except MalformedDocument:
        return Command(CommandKind.BYPASS, None, "", m)
    if not body:
        return Command(CommandKind.BYPASS, None, "", m)
    first = next(iter(body))
    kind = _KEYWORD_KINDS.get(first)
    if kind is None:
        return Command(CommandKind.BYPASS, None, "", m)
    collection = body[first] if isinstance(body[first], str) else ""
    if kind is CommandKind.FIND:
        return Command(kind, extract_key(body.get("filter"), key_field), collection, m)
    if kind is CommandKind.INSERT:
        return Command(kind, None, collection, m)
    field = "updates" if kind is CommandKind.UPDATE else "deletes"
    key, single = _statement_key(body, field, key_field)
    if not single:
        return Command(CommandKind.BYPASS, None, collection, m)
    return Command(kind, key, collection, m)


def response_is_cacheable(body: bytes) -> bool:
    """True if a response is a successful read with a non-empty batch.

    Only such responses are worth replaying for later hits; errors and
    empty results are forwarded but never stored.
    """
    try:
        doc = decode_document(body)
    except MalformedDocument:
        return False
    if doc.get("ok") != 1:
        return False
    cursor = doc.get("cursor")
    if not isinstance(cursor, dict):
        return False
    batch = cursor.get("firstBatch")
    return isinstance(batch, list) and len(batch) > 0


def synthesize_response(
    request: RawMessage, stored_body: bytes, next_id: Callable[[], int]
) -> RawMessage:
    """Build a hit response from a previously captured server body.

    The body is replayed verbatim; the header correlates to the
    triggering request and carries a fresh request id.
    """
    header = MessageHeader(
        length=HEADER_PREFIX_SIZE + len(stored_body),
        request_id=next_id(),
        response_to=request.header.request_id,
        op_code=MANIPULATION_OPCODE,
        flags=0,
        payload_type=0,
        payload_size=len(stored_body),
    )
    return RawMessage(header, stored_body)


Send = Callable[[RawMessage], None]


def handle_client(
    cmd: Command,
    store: CacheStore,
    pending: PendingTable,
    send_upstream: Send,
    send_downstream: Send,
    next_id: Callable[[], int],
) -> None:
    """Process one parsed client command.

    Reads with a key are answered locally on a hit (nothing goes
    upstream) or tracked and forwarded on a miss. Writes invalidate
    before forwarding — keyed writes their key, unkeyed writes the whole
    store. Everything else forwards untracked as a bypass.
    """
    if cmd.kind is CommandKind.FIND and cmd.key is not None:
        result = store.get(cmd.key)
        if isinstance(result, Hit):
            send_downstream(synthesize_response(cmd.raw, result.body, next_id))
            return
        # Track before forwarding so the response can never race the entry.
        pending.track_find(cmd.raw.header.request_id, cmd.key, result.token)
        send_upstream(cmd.raw)
        return
    if cmd.kind in (CommandKind.UPDATE, CommandKind.DELETE):
        if cmd.key is not None:
            store.invalidate(cmd.key)
        else:
            store.invalidate_all()
        pending.track_write(cmd.raw.header.request_id, cmd.key)
        send_upstream(cmd.raw)
        return
    store.record_bypass()
    send_upstream(cmd.raw)


def handle_server(
    m: RawMessage,
    store: CacheStore,
    pending: PendingTable,
    send_downstream: Send,
) -> None:
    """Process one server message; always forwards the original bytes.

    A tracked read response is offered to the store first (rejections
    are silent, counted in stats); a tracked write acknowledgment
    re-invalidates its key. Untracked messages pass through immediately.
    """
    entry = pending.take(m.header.response_to)
    if entry is not None:
        if entry.kind is PendingKind.FIND_FILL:
            if response_is_cacheable(m.body):
                store.put(entry.key, m.body, entry.token)
        elif entry.kind is PendingKind.WRITE_KEY:
            store.invalidate(entry.key)
        else:
            store.invalidate_all()
    send_downstream(m)
