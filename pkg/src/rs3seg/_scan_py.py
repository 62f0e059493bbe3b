"""Pure-numpy scan kernels: the fallback backend when the compiled
extension is unavailable, and the reference the extension is benchmarked
against.

Both kernels operate on already-discretized inputs:
  abar, bx: [L, D, N]  multiplicative / additive recurrence terms
with the state recurrence h_t = abar_t * h_{t-1} + bx_t, h_0 = 0.
"""

import numpy as np


def seq_states(abar, bx):
    """All hidden states of the recurrence, one time step at a time. [L, D, N]."""
    length = abar.shape[0]
    hs = np.empty_like(abar)
    h = np.zeros(abar.shape[1:], dtype=abar.dtype)
    for t in range(length):
        h = abar[t] * h + bx[t]
        hs[t] = h
    return hs


def chunk_states(abar, bx, chunk):
    """Hidden states via an associative prefix scan.

    Elements (a, b) combine as (a2*a1, a2*b1 + b2). Within each chunk a
    Blelloch up/down sweep (over the chunk padded to a power of two)
    produces local inclusive prefixes, vectorized across all chunks at
    once; a sequential pass then threads the carry between chunks.
    """
    length, d, n = abar.shape
    c = min(chunk, length)
    cp = 1 << (c - 1).bit_length()  # power-of-two tree width
    nch = -(-length // c)
    dt = abar.dtype

    a = np.ones((nch, cp, d, n), dtype=dt)
    b = np.zeros((nch, cp, d, n), dtype=dt)
    pad = nch * c - length
    a[:, :c] = np.concatenate([abar, np.ones((pad, d, n), dt)]).reshape(nch, c, d, n)
    b[:, :c] = np.concatenate([bx, np.zeros((pad, d, n), dt)]).reshape(nch, c, d, n)
    ea, eb = a.copy(), b.copy()

    levels = cp.bit_length() - 1
    # up-sweep: pairwise combine into the right node of each pair
    for lvl in range(levels):
        s = 1 << lvl
        lo, hi = slice(s - 1, cp, 2 * s), slice(2 * s - 1, cp, 2 * s)
        b[:, hi] = a[:, hi] * b[:, lo] + b[:, hi]
        a[:, hi] = a[:, hi] * a[:, lo]
    # down-sweep: exclusive prefixes (identity at the root)
    a[:, cp - 1] = 1
    b[:, cp - 1] = 0
    for lvl in reversed(range(levels)):
        s = 1 << lvl
        lo, hi = slice(s - 1, cp, 2 * s), slice(2 * s - 1, cp, 2 * s)
        ta, tb = a[:, lo].copy(), b[:, lo].copy()
        a[:, lo] = a[:, hi]
        b[:, lo] = b[:, hi]
        b[:, hi] = ta * b[:, hi] + tb
        a[:, hi] = ta * a[:, hi]
    # inclusive prefix = combine(exclusive, element)
    ia = ea * a
    ib = ea * b + eb

    # thread the carry through chunk summaries; h_0 = 0 so only the additive
    # part of the carry is ever needed
    carries = np.empty((nch, d, n), dtype=dt)
    carry = np.zeros((d, n), dtype=dt)
    for i in range(nch):
        carries[i] = carry
        carry = ia[i, c - 1] * carry + ib[i, c - 1]
    hs = ia[:, :c] * carries[:, None] + ib[:, :c]
    return hs.reshape(nch * c, d, n)[:length]
