"""Reproducible random streams.

All randomness goes through numpy's Philox-4x64 generator, a counter-based
bit generator with a 128-bit key.  A stream is identified by a 64-bit seed plus
an arbitrary tuple of labels (file path, attack name, epoch, ...); the labels
are hashed into the second key word so that every stream is independent of
the order in which streams are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(*parts: object) -> int:
    """64-bit BLAKE2b hash of the ``repr``-free string form of ``parts``."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        data = part if isinstance(part, bytes) else str(part).encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *labels: object) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *labels)``."""
    key = np.array([int(seed) & _MASK64, stable_hash(*labels)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a child 64-bit seed; used where a plain integer seed is stored."""
    return stable_hash(int(seed) & _MASK64, *labels)
