"""Shared helpers for the test suite: seeded random protocol values."""

from __future__ import annotations

import random
import string

from netkvcache.wire import MessageHeader


def random_scalar(rng: random.Random):
    kind = rng.randrange(6)
    if kind == 0:
        return rng.randint(-(2**31), 2**31 - 1)
    if kind == 1:
        return rng.randint(2**31, 2**62)  # forces the 64-bit encoding
    if kind == 2:
        return rng.uniform(-1e9, 1e9)
    if kind == 3:
        return "".join(rng.choice(string.printable) for _ in range(rng.randrange(0, 20)))
    if kind == 4:
        return rng.random() < 0.5
    return None


def random_document(rng: random.Random, depth: int = 0) -> dict:
    doc = {}
    for i in range(rng.randrange(0, 6)):
        name = f"f{i}_" + "".join(rng.choice(string.ascii_letters) for _ in range(3))
        roll = rng.random()
        if depth < 3 and roll < 0.15:
            doc[name] = random_document(rng, depth + 1)
        elif depth < 3 and roll < 0.3:
            doc[name] = [random_scalar(rng) for _ in range(rng.randrange(0, 4))]
        else:
            doc[name] = random_scalar(rng)
    return doc


def random_header(rng: random.Random) -> MessageHeader:
    return MessageHeader(
        length=rng.randrange(0, 2**32),
        request_id=rng.randint(-(2**31), 2**31 - 1),
        response_to=rng.randint(-(2**31), 2**31 - 1),
        op_code=rng.randint(-(2**31), 2**31 - 1),
        flags=rng.randrange(0, 2**32),
        payload_type=rng.randrange(0, 256),
        payload_size=rng.randrange(0, 2**32),
    )
