"""One global seed fanned out to every stochastic site by hashing."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from an arbitrary tuple of ints/strings.

    Unlike ``hash()``, the result does not depend on PYTHONHASHSEED.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") >> 1


def rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
