"""Deterministic seed derivation.

All randomness in a run flows from one root seed. Component seeds are derived
by hashing the root together with a component name, so adding a component
never shifts the streams of the others. hashlib is used instead of hash()
because the latter is salted per process.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, name: str) -> int:
    """Derive a 63-bit child seed from a root seed and a component name."""
    digest = hashlib.sha256(f"{root}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root: int, name: str) -> np.random.Generator:
    """Seeded generator for one named component of a run."""
    return np.random.default_rng(derive_seed(root, name))
