"""Named, splittable random streams.

Every randomized step in the library draws from a stream derived from a
master seed plus a tuple of string/integer keys. Derivation goes through
SHA-256, so streams are stable across platforms, Python versions, and
process boundaries (unlike the builtin ``hash``). Keys are chosen by the
caller to name the purpose of the stream ("cloak", "partition", ...),
which keeps the randomness of unrelated pipeline stages independent.
"""

import hashlib

import numpy as np

_SEP = b"\x1f"


def derive_seed(*keys) -> int:
    """Map a tuple of keys to a 63-bit integer seed, deterministically."""
    h = hashlib.sha256()
    for k in keys:
        h.update(_SEP)
        h.update(str(k).encode("utf8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


def derive_rng(*keys) -> np.random.Generator:
    """A fresh ``numpy`` generator seeded from the derived seed of ``keys``."""
    return np.random.default_rng(derive_seed(*keys))
