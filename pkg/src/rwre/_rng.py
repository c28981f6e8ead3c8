"""Keyed random streams.

Every random quantity in the package is drawn from a stream keyed by a master
seed plus a path of labels (``"env-block", 17`` or ``"replica", 3, "walk"``).
Streams are built from :class:`numpy.random.SeedSequence` spawn keys, so two
different keys give statistically independent streams and the same key always
gives the same stream, no matter in which order the streams are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def _encode(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=8).digest(), "little")
    part = int(part)
    # zigzag so negative site indices map to distinct non-negative words
    return 2 * part if part >= 0 else -2 * part - 1


def seed_sequence(master: int, *key: int | str) -> np.random.SeedSequence:
    if not 0 <= int(master) <= MAX_SEED:
        raise ValueError(f"master seed must be a 64-bit unsigned integer, got {master}")
    return np.random.SeedSequence(int(master), spawn_key=tuple(_encode(k) for k in key))


def stream(master: int, *key: int | str) -> np.random.Generator:
    """Independent generator for ``(master, *key)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master, *key)))


def derive_seed(master: int, *key: int | str) -> int:
    """64-bit child seed for ``(master, *key)``, usable as a new master seed."""
    words = seed_sequence(master, *key).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
