"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator keyed by a
``SeedSequence`` built from the 64-bit run seed plus integer stream keys, so
a stream is fully determined by ``(seed, round, purpose)`` and never depends
on how many draws another stream has made.
"""

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def purpose_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, *keys, purpose: str = "") -> np.random.Generator:
    # SeedSequence rejects negative entries; round -1 (initialisation) is shifted.
    entropy = [int(seed) & MASK64] + [int(k) + 1 for k in keys]
    if purpose:
        entropy.append(purpose_key(purpose))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def box_muller(gen: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal draws from pairs of uniforms (cosine branch then sine branch)."""
    half = (size + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1], keeps the log finite
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * half)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:size]
