"""Deterministic named random substreams derived from a single root seed.

Every stochastic consumer (truth generation, per-agent measurement noise,
filter births, resampling, the GA planner) owns an independent stream named by
(seed, purpose, indices).  Streams never interact, so trials and agents can be
advanced in parallel without perturbing results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("substream integer keys must be non-negative")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the given root seed and key path."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
