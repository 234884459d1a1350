"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def weighted_sample(weights, raw):
    """Draw ``len(raw)`` distinct indices, each with probability proportional to
    its integer weight among those not yet drawn.

    Uses a Fenwick tree so each draw and removal is O(log n). Draw ``t`` maps
    the raw 64-bit word ``raw[t]`` to ``floor(raw[t] * total / 2**64)``.
    """
    w = [int(x) for x in weights]
    n = len(w)
    tree = [0] * (n + 1)
    for i, wi in enumerate(w):
        j = i + 1
        while j <= n:
            tree[j] += wi
            j += j & -j
    total = sum(w)
    top = 1
    while top * 2 <= n:
        top *= 2
    out = np.empty(len(raw), dtype=np.int64)
    for t, r in enumerate(raw):
        target = (int(r) * total) >> 64
        pos = 0
        step = top
        while step:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        out[t] = pos
        v = w[pos]
        w[pos] = 0
        total -= v
        j = pos + 1
        while j <= n:
            tree[j] -= v
            j += j & -j
    return out


def nn_block_update(gram, sq_t, sq_s, tol, best, cand, idx, offset):
    """Fold one (targets x sources) block of inner products into the running
    nearest-neighbour state ``best``/``cand``/``idx`` (updated in place)."""
    d2 = (sq_t[:, None] + sq_s[None, :]) - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    new_best = np.minimum(best, d2.min(axis=1))
    thr = new_best + tol
    best[:] = new_best
    upd = ~(cand <= thr)
    if not upd.any():
        return
    rows = np.flatnonzero(upd)
    first = (d2[rows] <= thr[rows, None]).argmax(axis=1)
    idx[rows] = offset + first
    cand[rows] = d2[rows, first]
