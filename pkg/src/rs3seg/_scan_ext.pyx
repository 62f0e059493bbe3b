# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled scan kernels.

Same contracts as _scan_py: seq_states runs the recurrence one step at a
time, chunk_states runs the associative Blelloch scan within chunks with
a sequential carry between chunks. Inputs must be C-contiguous [L, D, N].
"""

import numpy as np


ctypedef fused real:
    float
    double


def seq_states(real[:, :, ::1] abar, real[:, :, ::1] bx):
    cdef Py_ssize_t L = abar.shape[0], D = abar.shape[1], N = abar.shape[2]
    dt = np.asarray(abar).dtype
    hs_np = np.empty((L, D, N), dtype=dt)
    h_np = np.zeros((D, N), dtype=dt)
    cdef real[:, :, ::1] hs = hs_np
    cdef real[:, ::1] h = h_np
    cdef Py_ssize_t t, d, n
    with nogil:
        for t in range(L):
            for d in range(D):
                for n in range(N):
                    h[d, n] = abar[t, d, n] * h[d, n] + bx[t, d, n]
                    hs[t, d, n] = h[d, n]
    return hs_np


def chunk_states(real[:, :, ::1] abar, real[:, :, ::1] bx, Py_ssize_t chunk):
    cdef Py_ssize_t L = abar.shape[0], D = abar.shape[1], N = abar.shape[2]
    cdef Py_ssize_t c = chunk if chunk < L else L
    cdef Py_ssize_t cp = 1
    while cp < c:
        cp <<= 1
    dt = np.asarray(abar).dtype
    hs_np = np.empty((L, D, N), dtype=dt)
    wa_np = np.empty((cp, D, N), dtype=dt)
    wb_np = np.empty((cp, D, N), dtype=dt)
    ea_np = np.empty((cp, D, N), dtype=dt)
    eb_np = np.empty((cp, D, N), dtype=dt)
    cb_np = np.zeros((D, N), dtype=dt)
    cdef real[:, :, ::1] hs = hs_np, wa = wa_np, wb = wb_np, ea = ea_np, eb = eb_np
    cdef real[:, ::1] cb = cb_np
    cdef Py_ssize_t start = 0, m, t, d, n, s, i, lo
    cdef real ta, tb, ia, ib
    with nogil:
        while start < L:
            m = c if start + c <= L else L - start
            # load the chunk, pad the tree with identity elements
            for t in range(cp):
                if t < m:
                    for d in range(D):
                        for n in range(N):
                            wa[t, d, n] = abar[start + t, d, n]
                            wb[t, d, n] = bx[start + t, d, n]
                            ea[t, d, n] = wa[t, d, n]
                            eb[t, d, n] = wb[t, d, n]
                else:
                    for d in range(D):
                        for n in range(N):
                            wa[t, d, n] = 1.0
                            wb[t, d, n] = 0.0
                            ea[t, d, n] = 1.0
                            eb[t, d, n] = 0.0
            # up-sweep
            s = 1
            while s < cp:
                i = 2 * s - 1
                while i < cp:
                    lo = i - s
                    for d in range(D):
                        for n in range(N):
                            wb[i, d, n] = wa[i, d, n] * wb[lo, d, n] + wb[i, d, n]
                            wa[i, d, n] = wa[i, d, n] * wa[lo, d, n]
                    i += 2 * s
                s <<= 1
            # down-sweep: exclusive prefixes
            for d in range(D):
                for n in range(N):
                    wa[cp - 1, d, n] = 1.0
                    wb[cp - 1, d, n] = 0.0
            s = cp >> 1
            while s >= 1:
                i = 2 * s - 1
                while i < cp:
                    lo = i - s
                    for d in range(D):
                        for n in range(N):
                            ta = wa[lo, d, n]
                            tb = wb[lo, d, n]
                            wa[lo, d, n] = wa[i, d, n]
                            wb[lo, d, n] = wb[i, d, n]
                            wb[i, d, n] = ta * wb[i, d, n] + tb
                            wa[i, d, n] = ta * wa[i, d, n]
                    i += 2 * s
                s >>= 1
            # inclusive prefix, apply the carry (h_0 = 0: additive part only)
            for t in range(m):
                for d in range(D):
                    for n in range(N):
                        ia = ea[t, d, n] * wa[t, d, n]
                        ib = ea[t, d, n] * wb[t, d, n] + eb[t, d, n]
                        hs[start + t, d, n] = ia * cb[d, n] + ib
            for d in range(D):
                for n in range(N):
                    cb[d, n] = hs[start + m - 1, d, n]
            start += c
    return hs_np
