"""Counter-based standard normals.

The ``i``-th normal of stream ``(seed, stream)`` is a pure function of
``(seed, stream, i)``: Philox4x64 is keyed by ``(seed, stream)`` and its
64-bit output ``i`` is mapped through the inverse normal CDF.  Any slice of
ordinals can therefore be drawn independently, which is what makes spectral
bands exact sub-streams of one seed.
"""

import numpy as np
from scipy.special import ndtri

CGFF_STREAM = 0
DGFF_STREAM = 1

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four words per counter increment
_SEED_MASK = (1 << 64) - 1


def standard_normals(seed, start, stop, stream=CGFF_STREAM):
    """Normals with ordinals ``start <= i < stop`` of the given stream."""
    n = stop - start
    if n <= 0:
        return np.empty(0)
    key = np.array([seed & _SEED_MASK, stream], dtype=np.uint64)
    block0 = start // _WORDS_PER_BLOCK
    offset = start - block0 * _WORDS_PER_BLOCK
    bg = np.random.Philox(key=key, counter=block0)
    raw = bg.random_raw(offset + n)[offset:]
    # 53-bit midpoint grid on (0, 1): never hits 0 or 1
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return ndtri(u)


def derive_seed(seed, index):
    """Per-replicate seed for Monte Carlo run ``seed``; independent of partitioning."""
    ss = np.random.SeedSequence([seed & _SEED_MASK, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
