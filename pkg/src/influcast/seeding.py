"""Deterministic seed derivation.

All randomness in the package flows from one 64-bit master seed.  Each
component derives its own stream by hashing the master seed together with a
scope path (component name plus optional indices), so adding or reordering
components never perturbs the streams of the others.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *scope) -> int:
    """Return a 64-bit seed for the component identified by ``scope``."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for part in scope:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master_seed: int, *scope) -> np.random.Generator:
    """A numpy Generator seeded from (master seed, scope path)."""
    return np.random.default_rng(derive_seed(master_seed, *scope))
