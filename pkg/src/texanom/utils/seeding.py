"""Labeled random streams derived from one top-level seed."""

import zlib

import numpy as np

SAMPLING = "sampling"
INIT = "init"
SHUFFLE = "shuffle"


def derive_rng(seed: int, label: str, worker: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, label, worker)``.

    Streams with different labels or worker ids never share state, and the
    same triple always yields the same sequence.
    """
    key = (zlib.crc32(label.encode("utf-8")), int(worker))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
