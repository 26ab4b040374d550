"""Hash-based seed derivation.

Every random stream in the package is keyed by a tuple of plain values
(master seed, segment key, cell id, indices, ...) so that results never
depend on the order in which tasks are scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def _encode(parts: tuple) -> bytes:
    return "\x1f".join(repr(p) for p in parts).encode("utf-8")


def derive_seed(*parts) -> int:
    """Return a non-negative 63-bit integer determined by ``parts``."""
    digest = hashlib.blake2b(_encode(parts), digest_size=8).digest()
    return int.from_bytes(digest, "big") & _MASK63


def derive_rng(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


def derive_uniform(*parts) -> float:
    """A single U[0, 1) variate keyed by ``parts`` (53 bits of resolution)."""
    digest = hashlib.blake2b(_encode(parts), digest_size=8).digest()
    return (int.from_bytes(digest, "big") >> 11) / float(1 << 53)


def text_digest(*texts: str) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()
