"""Seed expansion.

Every random stream is derived from one integer seed plus a tuple of labels:
``SeedSequence(seed, spawn_key=(crc32(label_1), crc32(label_2), ...))``.
Subsystems name their streams, so adding a draw in one place never shifts the
draws made anywhere else.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``(seed, *labels)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(l) for l in labels))
    return np.random.Generator(np.random.PCG64(ss))
