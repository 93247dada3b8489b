"""Random number streams.

Every stream is a Philox-4x64 counter-based generator, so sequences are
identical across platforms for a fixed numpy version. A root seed is expanded
into named sub-streams with ``SeedSequence(root, spawn_key=(crc32(name),))``;
adding a new consumer never perturbs existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for the component path ``names`` under ``seed``."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    seq = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *names: str | int) -> int:
    """A 63-bit integer seed for ``names``, for handing to subprocesses or configs."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    state = np.random.SeedSequence(int(seed), spawn_key=key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
