"""Compiled inner loops; randomness is always drawn by the caller."""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def alias_pick(slot, coin, prob, alias, out):
    """``out[i] = 1 + (slot[i] if coin[i] < prob[slot[i]] else alias[slot[i]])``."""
    for i in range(slot.size):
        j = slot[i]
        out[i] = (j if coin[i] < prob[j] else alias[j]) + 1


@numba.njit(cache=True, nogil=True)
def reduction_map(x, smooth, keep, place, k, ratios, starts, sizes, out):
    """Three-stage sample map; ``smooth`` is uniform on ``[0, 2k)`` and
    ``keep``/``place`` uniform on ``[0, 1)``."""
    for i in range(x.size):
        y = x[i] - 1
        if smooth[i] < k:
            y = smooth[i]
        if not keep[i] < ratios[y]:
            y = k
        n = sizes[y]
        off = np.int64(place[i] * n)
        if off >= n:
            off = n - 1
        out[i] = starts[y] + off + 1
