"""Named random substreams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"seed components must be nonnegative, got {part}")
    return int(part)


def seed_sequence(master: int, *names: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key(master), *(_key(n) for n in names)])


def derive_seed(master: int, *names: int | str) -> int:
    """Deterministic 63-bit integer seed for the substream ``master/names``."""
    state = seed_sequence(master, *names).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def substream(master: int, *names: int | str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *names))
