"""Seed derivation: every consumer gets ``crc32(name) XOR seed``."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    return (zlib.crc32(name.encode("utf-8")) ^ int(seed)) & 0xFFFFFFFF


def rng_for(seed: int, name: str, *path: int) -> np.random.Generator:
    return np.random.default_rng([derive_seed(seed, name), *path])


def sub_seed(seed: int, *path: int) -> int:
    """Deterministic 32-bit seed for a position (epoch, batch, ...) in a run."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1)[0])
