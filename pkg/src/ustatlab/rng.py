"""Counter-based random number streams.

Every simulation in this package draws from a Philox generator keyed by
(seed, stream). Philox is counter-based, so distinct (seed, stream) pairs
give statistically independent streams with no shared mutable state, and a
stream's output is a pure function of its key. Parallel replication uses one
stream per replicate; results are therefore identical for any worker count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def philox_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the generator for stream `stream` of the family keyed by `seed`."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def replicate_stream(n: int, replicate: int) -> int:
    """Stream id for replicate `replicate` of an experiment cell at horizon `n`.

    Injective for n < 2**31 and replicate < 2**32, so replicate streams of
    different horizons never collide.
    """
    return ((n & 0x7FFFFFFF) << 32) | (replicate & 0xFFFFFFFF)
