"""Named, counter-based random streams.

Each stream is a Philox generator keyed from ``(seed, chain_index, tag)``.
Adding a diagnostic stream under a new tag never shifts the draws of an
existing chain.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_words(tag: str) -> list[int]:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def make_stream(seed: int, chain_index: int = 0, tag: str = "chain") -> np.random.Generator:
    if seed is None:
        raise ValueError("an explicit seed is required")
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    entropy = [seed & 0xFFFFFFFF, seed >> 32, int(chain_index), *_tag_words(tag)]
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(ss))
