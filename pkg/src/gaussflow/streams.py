"""Counter-based random streams for reproducible parallel Monte Carlo.

Samples are processed in fixed-size blocks. Each block draws from its own
Philox generator keyed by ``(seed, stream, block)``, so the numbers a sample
sees depend only on its index, never on how blocks are spread over workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 4096

# stream tags keep independent uses of one seed apart
PATHS = 0
BRIDGE = 1
REJECTION = 2
INITIAL = 3


def block_generator(seed, stream, block):
    key = np.random.SeedSequence([int(seed), int(stream), int(block)])
    return np.random.Generator(np.random.Philox(key))


def block_slices(n_samples, block_size=BLOCK_SIZE):
    return [slice(i, min(i + block_size, n_samples)) for i in range(0, n_samples, block_size)]


def map_blocks(fn, n_samples, workers=1, block_size=BLOCK_SIZE):
    """Call ``fn(block_index, slice)`` for every block and return results in block order."""
    slices = block_slices(n_samples, block_size)
    if workers is None or workers <= 1 or len(slices) == 1:
        return [fn(i, sl) for i, sl in enumerate(slices)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(slices)), slices))
