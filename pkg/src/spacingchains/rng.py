"""Counter-based random streams keyed by ``(seed, stream_id)``.

Every stochastic routine takes a seed and a stream id and builds its own
Philox generator from them, so results never depend on how work is
scheduled across threads.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed, stream_id=0):
    """Return a Philox-backed generator for the given ``(seed, stream_id)`` key."""
    seed = int(seed)
    stream_id = int(stream_id)
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be non-negative")
    key = ((seed & _MASK64) << 64) | (stream_id & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def open_unit(rng, size):
    """Uniform draws on the half-open interval (0, 1]."""
    return 1.0 - rng.random(size)
