"""Deterministic seed derivation.

Every stochastic component takes an integer seed and derives child seeds
through :func:`child_seed` with string tags. The derivation is stable
across platforms and process runs, which is what makes whole-pipeline
byte-identical reruns possible.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_entropy(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def child_seed(seed: int, *tags) -> int:
    """Derive a 32-bit seed from ``seed`` and a sequence of tags."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [_tag_entropy(t) for t in tags])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def spawn_rng(seed: int, *tags) -> np.random.Generator:
    """A PCG64 generator seeded from ``seed`` and tags."""
    return np.random.default_rng(child_seed(seed, *tags) if tags else int(seed) & 0xFFFFFFFF)
