"""Deterministic seed derivation for units of work.

Workers, folds, trials and trees each get their own RNG stream derived from
the global seed plus context labels. Derivation is content-hash based, so it
is stable across processes and runs (unlike Python's salted hash()).
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map (global_seed, *labels) to a stable 32-bit seed.

    Parts may be ints, strings, floats or nested tuples; repr() of the tuple
    is hashed, so values must have stable reprs (ints and str always do).
    """
    digest = hashlib.sha256(repr(tuple(parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def rng_for(*parts) -> np.random.Generator:
    """Generator seeded from derive_seed(*parts)."""
    return np.random.default_rng(derive_seed(*parts))
