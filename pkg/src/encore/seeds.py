"""Deterministic per-item seed derivation.

Every batch operation that needs randomness derives one seed per item
from the run seed and the item's stable identity. Items keep their
random streams when unrelated files are added to or removed from a run.
"""

from __future__ import annotations

import hashlib

_MASK = 2**64 - 1


def derive_seed(seed: int, *parts: str) -> int:
    """XOR ``seed`` with a stable 64-bit hash of the item identity."""
    if not parts:
        raise ValueError("need at least one identity part")
    digest = hashlib.blake2b(
        "\x1f".join(parts).encode("utf-8"), digest_size=8
    ).digest()
    return (seed ^ int.from_bytes(digest, "little")) & _MASK
