"""Named random streams derived from a single experiment seed.

Every source of randomness (data noise, posterior draws, shuffling, ...)
gets its own stream keyed by a purpose label, so runs are reproducible and
streams stay independent of each other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(seed: int, label: str) -> np.random.SeedSequence:
    """Derive a child seed sequence from ``seed`` and a purpose label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words])


def stream(seed: int, label: str) -> np.random.Generator:
    """Generator for the stream identified by (seed, label)."""
    return np.random.default_rng(stream_seed(seed, label))
