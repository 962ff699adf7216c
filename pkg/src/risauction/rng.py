"""Named, collision-free random streams derived from one base seed."""

from __future__ import annotations

import hashlib

import numpy as np


def stream_code(label: str) -> int:
    """Stable 32-bit code for a stream label (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream_seed(base_seed: int, label: str, *indices: int) -> list[int]:
    """Entropy word list for the (base_seed, label, *indices) stream."""
    return [int(base_seed), stream_code(label), *(int(i) for i in indices)]


def stream_rng(base_seed: int, label: str, *indices: int) -> np.random.Generator:
    """Generator for the named stream; distinct (label, indices) never collide."""
    return np.random.default_rng(np.random.SeedSequence(stream_seed(base_seed, label, *indices)))
