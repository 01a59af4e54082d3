"""Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is ``(seed, path_index)``
and whose counter high word carries a stream id, so the draws for a given path
never depend on how many other paths were generated first or on which worker
generated them.
"""

from __future__ import annotations

import numpy as np

BROWNIAN = 0
CHAIN = 1
SPARE = 2

_MASK64 = (1 << 64) - 1


def stream(seed: int, path_index: int = 0, stream_id: int = BROWNIAN) -> np.random.Generator:
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path_index must be non-negative")
    key = np.array([seed & _MASK64, path_index & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
