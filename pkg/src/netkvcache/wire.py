"""Wire codec: message header, document payload, and stream framing.

Every message starts with a 25-byte header of 7 fields; all multi-byte
integers are little-endian:

    offset  size  field
    ------  ----  ------------------------------------------------------
         0     4  length        u32  total message size, including itself
         4     4  request_id    i32  unique per request within a connection
         8     4  response_to   i32  request_id being answered; 0 for requests
        12     4  op_code       i32  2013 marks data-manipulation messages
        16     4  flags         u32  opaque driver/server flag bits
        20     1  payload_type  u8   0 = single body document
        21     4  payload_size  u32  total size of the encoded document

The payload_size field doubles as the document's own length prefix: the
encoded document begins at offset 21, so ``length == 21 + payload_size``
and a message body (``RawMessage.body``) always includes those 4 bytes.

Documents are a binary JSON subset, self-delimiting:

    [u32 total length][elements...][0x00]

with each element ``[tag][name cstring][value]`` and tags

    0x01 double    0x02 string   0x03 document   0x04 array
    0x08 boolean   0x0A null     0x10 int32      0x12 int64

Decoders never read past the declared lengths; malformed input raises a
typed ``WireError`` subclass, never an unchecked exception.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Any, Mapping

HEADER_SIZE = 25
# Bytes of the header that precede the document payload (the payload_size
# field overlaps the document's length prefix).
HEADER_PREFIX_SIZE = 21
MANIPULATION_OPCODE = 2013
DEFAULT_MAX_MESSAGE_BYTES = 16 * 1024 * 1024
# Bound on document nesting accepted by the decoder (stack safety on fuzz
# input; real traffic nests two or three levels deep).
MAX_DOCUMENT_DEPTH = 128

_HEADER = struct.Struct("<IiiiIBI")
_HEADER_PREFIX = struct.Struct("<IiiiIB")
_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")

_INT32_MIN, _INT32_MAX = -(2**31), 2**31 - 1
_INT64_MIN, _INT64_MAX = -(2**63), 2**63 - 1

TAG_DOUBLE = 0x01
TAG_STRING = 0x02
TAG_DOCUMENT = 0x03
TAG_ARRAY = 0x04
TAG_BOOLEAN = 0x08
TAG_NULL = 0x0A
TAG_INT32 = 0x10
TAG_INT64 = 0x12


class WireError(Exception):
    """Base class for all codec and framing errors."""


class TruncatedHeader(WireError):
    """Fewer bytes available than a complete 25-byte header."""


class MalformedDocument(WireError):
    """Document bytes violate the encoding (bad length, tag, or string)."""


class UnsupportedType(WireError):
    """A value outside the supported type subset was passed to the encoder."""


class ConnectionClosed(WireError):
    """The stream ended cleanly on a message boundary."""


class TruncatedMessage(WireError):
    """The stream ended in the middle of a message."""


class OversizeMessage(WireError):
    """A declared message length exceeds the configured maximum."""


@dataclass(frozen=True)
class MessageHeader:
    """The 7 header fields in wire order."""

    length: int
    request_id: int
    response_to: int
    op_code: int
    flags: int
    payload_type: int
    payload_size: int


@dataclass(frozen=True)
class RawMessage:
    """One framed message: parsed header plus the raw payload bytes.

    ``body`` is everything from offset 21 of the frame, so it starts with
    the document's 4-byte length prefix and ``header.length`` always
    equals ``21 + len(body)``.
    """

    header: MessageHeader
    body: bytes

    def to_bytes(self) -> bytes:
        h = self.header
        if h.length != HEADER_PREFIX_SIZE + len(self.body):
            raise ValueError(
                f"inconsistent message: length={h.length}, body={len(self.body)} bytes"
            )
        return _HEADER_PREFIX.pack(
            h.length, h.request_id, h.response_to, h.op_code, h.flags, h.payload_type
        ) + self.body

    @classmethod
    def from_frame(cls, frame: bytes) -> "RawMessage":
        return cls(header=decode_header(frame[:HEADER_SIZE]), body=frame[HEADER_PREFIX_SIZE:])


def encode_header(h: MessageHeader) -> bytes:
    """Pack a header into its 25-byte wire form."""
    try:
        return _HEADER.pack(
            h.length, h.request_id, h.response_to, h.op_code,
            h.flags, h.payload_type, h.payload_size,
        )
    except struct.error as exc:
        raise ValueError(f"header field out of range: {exc}") from None


def decode_header(data: bytes) -> MessageHeader:
    """Unpack a 25-byte header.

    Raises:
        TruncatedHeader: if fewer than 25 bytes are given.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedHeader(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    return MessageHeader(*_HEADER.unpack_from(data))


def _encode_value(value: Any, out: bytearray) -> int:
    """Append the encoded value, returning its type tag."""
    # bool before int: bool is an int subclass.
    if isinstance(value, bool):
        out.append(1 if value else 0)
        return TAG_BOOLEAN
    if isinstance(value, float):
        out += _F64.pack(value)
        return TAG_DOUBLE
    if isinstance(value, str):
        data = value.encode("utf-8")
        out += _U32.pack(len(data) + 1)
        out += data
        out.append(0)
        return TAG_STRING
    if isinstance(value, Mapping):
        out += encode_document(value)
        return TAG_DOCUMENT
    if isinstance(value, (list, tuple)):
        out += encode_document({str(i): v for i, v in enumerate(value)})
        return TAG_ARRAY
    if value is None:
        return TAG_NULL
    if isinstance(value, int):
        if _INT32_MIN <= value <= _INT32_MAX:
            out += _I32.pack(value)
            return TAG_INT32
        if _INT64_MIN <= value <= _INT64_MAX:
            out += _I64.pack(value)
            return TAG_INT64
        raise UnsupportedType(f"integer out of 64-bit range: {value}")
    raise UnsupportedType(f"cannot encode value of type {type(value).__name__}")


def _encode_name(name: Any) -> bytes:
    if not isinstance(name, str) or not name:
        raise UnsupportedType(f"field name must be a non-empty string, got {name!r}")
    data = name.encode("utf-8")
    if b"\x00" in data:
        raise UnsupportedType(f"field name contains NUL: {name!r}")
    return data + b"\x00"


def encode_document(doc: Mapping[str, Any]) -> bytes:
    """Encode a mapping into its self-delimiting binary form.

    Field order is preserved. Raises:
        UnsupportedType: for values outside the supported subset or
            invalid field names.
    """
    body = bytearray()
    for name, value in doc.items():
        name_bytes = _encode_name(name)
        element = bytearray()
        tag = _encode_value(value, element)
        body.append(tag)
        body += name_bytes
        body += element
    return _U32.pack(len(body) + 5) + bytes(body) + b"\x00"


class _Reader:
    """Bounds-checked cursor over document bytes."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, start: int, end: int):
        self.data = data
        self.pos = start
        self.end = end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise MalformedDocument("document truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MalformedDocument("document truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def cstring(self) -> str:
        nul = self.data.find(b"\x00", self.pos, self.end)
        if nul < 0:
            raise MalformedDocument("unterminated field name")
        raw = self.data[self.pos:nul]
        self.pos = nul + 1
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedDocument("field name is not valid UTF-8") from None


def _decode_value(tag: int, r: _Reader, depth: int) -> Any:
    if tag == TAG_DOUBLE:
        return _F64.unpack(r.take(8))[0]
    if tag == TAG_STRING:
        (n,) = _U32.unpack(r.take(4))
        if n < 1:
            raise MalformedDocument("string length must be at least 1")
        raw = r.take(n)
        if raw[-1] != 0:
            raise MalformedDocument("unterminated string")
        try:
            return raw[:-1].decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedDocument("string is not valid UTF-8") from None
    if tag == TAG_DOCUMENT or tag == TAG_ARRAY:
        sub = _decode_document_at(r, depth + 1)
        return list(sub.values()) if tag == TAG_ARRAY else sub
    if tag == TAG_BOOLEAN:
        b = r.byte()
        if b not in (0, 1):
            raise MalformedDocument(f"invalid boolean byte {b:#04x}")
        return b == 1
    if tag == TAG_NULL:
        return None
    if tag == TAG_INT32:
        return _I32.unpack(r.take(4))[0]
    if tag == TAG_INT64:
        return _I64.unpack(r.take(8))[0]
    raise MalformedDocument(f"unknown element tag {tag:#04x}")


def _decode_document_at(r: _Reader, depth: int) -> dict[str, Any]:
    if depth > MAX_DOCUMENT_DEPTH:
        raise MalformedDocument("document nesting too deep")
    (total,) = _U32.unpack(r.take(4))
    if total < 5 or r.pos - 4 + total > r.end:
        raise MalformedDocument(f"bad document length prefix {total}")
    end = r.pos - 4 + total
    inner = _Reader(r.data, r.pos, end - 1)
    doc: dict[str, Any] = {}
    while inner.pos < inner.end:
        tag = inner.byte()
        name = inner.cstring()
        doc[name] = _decode_value(tag, inner, depth)
    if r.data[end - 1] != 0:
        raise MalformedDocument("missing document terminator")
    r.pos = end
    return doc


def decode_document(data: bytes) -> dict[str, Any]:
    """Decode one encoded document occupying exactly ``data``.

    Raises:
        MalformedDocument: on any encoding violation (the declared length
            must equal ``len(data)``).
    """
    if len(data) < 5:
        raise MalformedDocument(f"document needs at least 5 bytes, have {len(data)}")
    r = _Reader(data, 0, len(data))
    doc = _decode_document_at(r, 0)
    if r.pos != len(data):
        raise MalformedDocument("trailing bytes after document")
    return doc


def peek_first_field(body: bytes) -> str | None:
    """Return the first element's field name, or None if unreadable.

    Cheap lookahead used for flow classification; it does not validate
    the rest of the document.
    """
    if len(body) < 7:
        return None
    nul = body.find(b"\x00", 5)
    if nul < 0:
        return None
    try:
        return body[5:nul].decode("utf-8")
    except UnicodeDecodeError:
        return None


class SocketStream:
    """Minimal read/write adapter over a connected socket.

    Unlike ``socket.makefile``, it stays usable after a read timeout,
    which closed-loop clients rely on to carry on past a lost response.
    """

    __slots__ = ("sock",)

    def __init__(self, sock):
        self.sock = sock

    def read(self, n: int) -> bytes:
        return self.sock.recv(n)

    def write(self, data: bytes) -> None:
        self.sock.sendall(data)

    def flush(self) -> None:
        pass


def _read_exact(stream, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if buf:
                raise TruncatedMessage(f"stream ended {n - len(buf)} bytes short")
            raise ConnectionClosed("stream closed")
        buf += chunk
    return bytes(buf)


def read_message(stream, max_bytes: int = DEFAULT_MAX_MESSAGE_BYTES) -> RawMessage:
    """Read one complete message from a stream with a ``read(n)`` method.

    Handles arbitrary chunking (waits for the declared length).

    Raises:
        ConnectionClosed: clean EOF on a message boundary.
        TruncatedMessage: EOF in the middle of a message.
        OversizeMessage: declared length exceeds ``max_bytes``.
        TruncatedHeader: declared length cannot contain a full header.
    """
    prefix = _read_exact(stream, 4)
    (length,) = _U32.unpack(prefix)
    if length > max_bytes:
        raise OversizeMessage(f"message length {length} exceeds limit {max_bytes}")
    if length < HEADER_SIZE:
        raise TruncatedHeader(f"message length {length} cannot hold a header")
    try:
        rest = _read_exact(stream, length - 4)
    except ConnectionClosed:
        raise TruncatedMessage("stream ended after length prefix") from None
    return RawMessage.from_frame(prefix + rest)


def write_message(stream, m: RawMessage) -> None:
    """Write one message; emits exactly ``m.header.length`` bytes.

    Raises:
        ConnectionClosed: if the peer has gone away.
    """
    data = m.to_bytes()
    try:
        stream.write(data)
        stream.flush()
    except (BrokenPipeError, ConnectionResetError, OSError) as exc:
        raise ConnectionClosed(str(exc)) from None
