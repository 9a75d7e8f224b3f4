"""Seeded RNG substreams.

One master seed fans out into independent named streams, one per subsystem
(topology, traffic, security, ...), so adding draws to one subsystem never
perturbs another's sequence and whole runs stay bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _entropy(master_seed: int, key: tuple) -> list[int]:
    material = [int(master_seed) & 0xFFFFFFFF]
    for part in key:
        if isinstance(part, str):
            material.append(zlib.crc32(part.encode("utf-8")))
        else:
            material.append(int(part) & 0xFFFFFFFF)
    return material


def substream(master_seed: int, *key) -> np.random.Generator:
    """Independent generator for (master_seed, key...), stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(master_seed, key)))
