"""Named, counter-based random streams.

Every stochastic site in the package draws from a stream addressed by a
root seed plus a path of names, e.g. ``stream(7, "data", "seq", 3)``.
Streams are backed by the Philox counter-based bit generator, so the same
(seed, path) always yields the same draws regardless of what other streams
were consumed before it.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *path) -> int:
    """Derive a 128-bit Philox key from a root seed and a name path."""
    tag = ":".join([str(int(seed))] + [str(p) for p in path])
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *path) -> np.random.Generator:
    """Return an independent generator for (seed, *path)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
