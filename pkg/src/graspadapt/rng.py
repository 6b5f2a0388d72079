"""Counter-based PRNG helpers.

All dataset-producing randomness in this project goes through Philox, a
fixed-width 64-bit counter-based generator, so that equal seeds give
byte-identical results across runs and platforms.  Streams are split by
hashing a (seed, *stream) tuple through a SeedSequence, which lets any
element of a batch be regenerated independently of the rest.
"""

from __future__ import annotations

import numpy as np

GENERATOR_SCHEME = "philox-seedseq-v1"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the (seed, *stream) sub-stream."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Stable 63-bit integer derived from (seed, *stream)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
