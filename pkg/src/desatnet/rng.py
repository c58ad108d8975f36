"""Deterministic named random streams.

Every stochastic choice in the package (parameter init, dropout masks, batch
shuffling, synthetic cohorts, splits) draws from a generator derived from an
integer seed plus a tuple of string/int tags. Streams with different tags are
statistically independent, and no global numpy state is ever touched, so
subsystems cannot perturb each other and whole runs replay bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_entropy(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """A PCG64 generator keyed by ``seed`` and a stable hash of ``tags``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_tag_entropy(t) for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
