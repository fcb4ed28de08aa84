"""Classification of messages into the three traffic flows.

Client-side messages split into the manipulation flow (data operations
the cache understands) and the coordination flow (handshakes, pings,
monitoring — everything else, forwarded untouched). Server-side messages
split into the response flow (answers to tracked manipulation requests,
matched by ``response_to``) and the coordination flow.
"""

from __future__ import annotations

import enum

from .wire import MANIPULATION_OPCODE, RawMessage, peek_first_field

COMMAND_KEYWORDS = frozenset({"find", "insert", "update", "delete"})


class FlowClass(enum.Enum):
    MANIPULATION = "manipulation"
    RESPONSE = "response"
    COORDINATION = "coordination"


class Direction(enum.Enum):
    FROM_CLIENT = "from_client"
    FROM_SERVER = "from_server"


def classify_client(m: RawMessage) -> FlowClass:
    """Classify a client-originated message.

    Manipulation iff the opcode is 2013 and the body's first field is a
    recognized command keyword; anything else (including undecodable
    bodies) is coordination traffic and passes through untouched.
    """
    if m.header.op_code != MANIPULATION_OPCODE:
        return FlowClass.COORDINATION
    first = peek_first_field(m.body)
    if first in COMMAND_KEYWORDS:
        return FlowClass.MANIPULATION
    return FlowClass.COORDINATION


def classify_server(m: RawMessage, pending) -> FlowClass:
    """Classify a server-originated message.

    Response iff ``response_to`` matches an outstanding tracked request
    in the session's pending table; coordination otherwise.
    """
    if pending.contains(m.header.response_to):
        return FlowClass.RESPONSE
    return FlowClass.COORDINATION
