"""Protocol-speaking mock key-value server for integration runs.

Serves a seeded table of keys 1..keyspace. Reads answer with a cursor
document (`firstBatch` holding the record, or empty for unknown keys);
writes mutate the in-memory table; anything unrecognized gets a minimal
`ok` acknowledgment so coordination traffic flows. Find responses are
pre-encoded per key and the encoding cache dropped on writes, keeping
serialization noise out of latency measurements.
"""

from __future__ import annotations

import logging
import random
import socket
import string
import threading
import time

from .. import wire
from ..engine import extract_key
from ..storage import canonical_key

log = logging.getLogger(__name__)


def _seeded_phrase(rng: random.Random, size: int) -> str:
    return "".join(rng.choice(string.ascii_letters + " ") for _ in range(size))


class MockKVServer:
    def __init__(
        self,
        listen: tuple[str, int] = ("127.0.0.1", 0),
        keyspace: int = 100,
        seed: int = 1234,
        doc_size: int = 200,
        processing_delay: float = 0.0,
        key_field: str = "_id",
        record_transcript: bool = False,
    ):
        self.listen = listen
        self.keyspace = keyspace
        self.key_field = key_field
        self.processing_delay = processing_delay
        self.record_transcript = record_transcript
        rng = random.Random(seed)
        self._table: dict[bytes, dict] = {}
        for k in range(1, keyspace + 1):
            self._table[canonical_key(k)] = {
                key_field: k,
                "phrase": _seeded_phrase(rng, doc_size),
            }
        self._encoded_responses: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._conns: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self.transcripts: list[dict[str, list[bytes]]] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def start(self) -> "MockKVServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(self.listen)
        listener.listen(64)
        self._listener = listener
        thread = threading.Thread(target=self._accept_loop, name="mock-accept", daemon=True)
        thread.start()
        self._threads.append(thread)
        return self

    def stop(self) -> None:
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for thread in self._threads:
            thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.append(conn)
            transcript = {"received": [], "sent": []} if self.record_transcript else None
            if transcript is not None:
                self.transcripts.append(transcript)
            thread = threading.Thread(
                target=self._serve, args=(conn, transcript),
                name="mock-conn", daemon=True,
            )
            thread.start()
            self._threads.append(thread)

    def _serve(self, conn: socket.socket, transcript) -> None:
        rfile = conn.makefile("rb")
        wfile = conn.makefile("wb")
        response_ids = iter(range(1, 2**31))
        try:
            while True:
                m = wire.read_message(rfile)
                if transcript is not None:
                    transcript["received"].append(m.to_bytes())
                if self.processing_delay > 0:
                    time.sleep(self.processing_delay)
                body = self._respond(m)
                reply = wire.RawMessage(
                    wire.MessageHeader(
                        length=wire.HEADER_PREFIX_SIZE + len(body),
                        request_id=next(response_ids),
                        response_to=m.header.request_id,
                        op_code=wire.MANIPULATION_OPCODE,
                        flags=0,
                        payload_type=0,
                        payload_size=len(body),
                    ),
                    body,
                )
                if transcript is not None:
                    transcript["sent"].append(reply.to_bytes())
                wire.write_message(wfile, reply)
        except (wire.ConnectionClosed, wire.TruncatedMessage):
            pass
        except (wire.WireError, OSError, ValueError) as exc:
            log.debug("mock connection error: %s", exc)
        finally:
            conn.close()

    # -- request handling --------------------------------------------------

    def _respond(self, m: wire.RawMessage) -> bytes:
        try:
            body = wire.decode_document(m.body)
        except wire.MalformedDocument:
            return wire.encode_document({"ok": 0.0, "errmsg": "malformed document"})
        if not body:
            return wire.encode_document({"ok": 1.0})
        first = next(iter(body))
        if first == "find":
            return self._find(body)
        if first == "insert":
            return self._insert(body)
        if first == "update":
            return self._update(body)
        if first == "delete":
            return self._delete(body)
        return wire.encode_document({"ok": 1.0})

    def _find(self, body: dict) -> bytes:
        collection = body.get("find", "")
        key = extract_key(body.get("filter"), self.key_field)
        with self._lock:
            if key is not None and key in self._encoded_responses:
                return self._encoded_responses[key]
            doc = self._table.get(key) if key is not None else None
            batch = [dict(doc)] if doc is not None else []
            encoded = wire.encode_document({
                "cursor": {"firstBatch": batch, "id": 0, "ns": f"kv.{collection}"},
                "ok": 1.0,
            })
            if key is not None and doc is not None:
                self._encoded_responses[key] = encoded
            return encoded

    def _insert(self, body: dict) -> bytes:
        docs = body.get("documents")
        inserted = 0
        if isinstance(docs, list):
            with self._lock:
                for doc in docs:
                    if not isinstance(doc, dict):
                        continue
                    key = canonical_key(doc.get(self.key_field))
                    if key is None:
                        continue
                    self._table[key] = dict(doc)
                    self._encoded_responses.pop(key, None)
                    inserted += 1
        return wire.encode_document({"n": inserted, "ok": 1.0})

    def _update(self, body: dict) -> bytes:
        statements = body.get("updates")
        modified = 0
        if isinstance(statements, list):
            with self._lock:
                for statement in statements:
                    if not isinstance(statement, dict):
                        continue
                    key = extract_key(statement.get("q"), self.key_field)
                    if key is None or key not in self._table:
                        continue
                    change = statement.get("u")
                    if not isinstance(change, dict):
                        continue
                    if isinstance(change.get("$set"), dict):
                        self._table[key].update(change["$set"])
                    else:
                        fresh = dict(change)
                        fresh[self.key_field] = self._table[key][self.key_field]
                        self._table[key] = fresh
                    self._encoded_responses.pop(key, None)
                    modified += 1
        return wire.encode_document({"n": modified, "nModified": modified, "ok": 1.0})

    def _delete(self, body: dict) -> bytes:
        statements = body.get("deletes")
        removed = 0
        if isinstance(statements, list):
            with self._lock:
                for statement in statements:
                    if not isinstance(statement, dict):
                        continue
                    key = extract_key(statement.get("q"), self.key_field)
                    if key is not None and key in self._table:
                        del self._table[key]
                        self._encoded_responses.pop(key, None)
                        removed += 1
        return wire.encode_document({"n": removed, "ok": 1.0})


def run_mock_server(
    address: tuple[str, int], keyspace: int = 100,
    doc_size: int = 200, processing_delay: float = 0.0, seed: int = 1234,
) -> MockKVServer:
    """Start a mock server; returns the running instance (caller stops it)."""
    return MockKVServer(
        listen=address, keyspace=keyspace, doc_size=doc_size,
        processing_delay=processing_delay, seed=seed,
    ).start()
