"""Deterministic seed derivation.

Every random draw in the pipeline comes from a Generator derived from a
master seed plus a tuple of string/int tags, so parallel or reordered
execution can never change outputs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags: object) -> int:
    """Derive a stable 64-bit seed from a master seed and context tags."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master: int, *tags: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *tags)))
