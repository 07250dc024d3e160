"""Keyed, counter-based random streams.

Every stochastic routine takes a ``numpy.random.Generator``; experiments
derive one per task from ``(experiment name, config index, seed)`` so that
results do not depend on scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key: tuple) -> list[int]:
    words = []
    for part in key:
        if isinstance(part, (int, np.integer)):
            if part < 0:
                raise ValueError(f"negative integer in rng key: {part}")
            words.append(int(part))
        else:
            digest = hashlib.sha256(str(part).encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:8], "little"))
    return words


def make_rng(*key) -> np.random.Generator:
    """Philox generator keyed by an arbitrary tuple of ints and strings."""
    seq = np.random.SeedSequence(_key_words(key))
    return np.random.Generator(np.random.Philox(seq))


def child_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``n`` independent streams off an existing generator."""
    return rng.spawn(n)
