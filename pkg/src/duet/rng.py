"""Seeded random number streams.

All randomness in the toolkit flows from one integer seed through named
substreams.  A substream is a numpy ``Generator`` backed by the PCG64 bit
generator, keyed by ``(seed, sha256(name)[:8])`` through ``SeedSequence``.
The construction is documented here so that two runs (or two processes)
derive identical streams from the same seed and name.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return the PCG64 generator for ``name`` under ``seed``."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), key))))
