# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef extern from *:
    """
    static inline unsigned long long xdr_mulhi64(unsigned long long a, unsigned long long b) {
        return (unsigned long long)(((unsigned __int128)a * (unsigned __int128)b) >> 64);
    }
    """
    unsigned long long xdr_mulhi64(unsigned long long a, unsigned long long b) nogil


def weighted_sample(const uint64_t[::1] weights, const uint64_t[::1] raw):
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t k = raw.shape[0]
    cdef uint64_t[::1] tree = np.zeros(n + 1, dtype=np.uint64)
    cdef uint64_t[::1] w = np.array(weights, dtype=np.uint64, copy=True)
    cdef int64_t[::1] out = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t i, j, t, pos, step, top
    cdef uint64_t total = 0, target, v

    with nogil:
        for i in range(n):
            total += w[i]
            j = i + 1
            while j <= n:
                tree[j] += w[i]
                j += j & (-j)
        top = 1
        while top * 2 <= n:
            top *= 2
        for t in range(k):
            target = xdr_mulhi64(raw[t], total)
            pos = 0
            step = top
            while step > 0:
                if pos + step <= n and tree[pos + step] <= target:
                    pos += step
                    target -= tree[pos]
                step >>= 1
            out[t] = pos
            v = w[pos]
            w[pos] = 0
            total -= v
            j = pos + 1
            while j <= n:
                tree[j] -= v
                j += j & (-j)
    return np.asarray(out)


def nn_block_update(const double[:, ::1] gram, const double[::1] sq_t, const double[::1] sq_s,
                    const double[::1] tol, double[::1] best, double[::1] cand,
                    int64_t[::1] idx, Py_ssize_t offset):
    cdef Py_ssize_t tb = gram.shape[0]
    cdef Py_ssize_t sb = gram.shape[1]
    cdef Py_ssize_t i, j
    cdef double d2, m, thr, a
    cdef double[::1] row = np.empty(sb, dtype=np.float64)

    with nogil:
        for i in range(tb):
            a = sq_t[i]
            m = best[i]
            for j in range(sb):
                d2 = (a + sq_s[j]) - 2.0 * gram[i, j]
                if d2 < 0.0:
                    d2 = 0.0
                row[j] = d2
                if d2 < m:
                    m = d2
            thr = m + tol[i]
            best[i] = m
            if cand[i] <= thr:
                continue
            for j in range(sb):
                if row[j] <= thr:
                    idx[i] = offset + j
                    cand[i] = row[j]
                    break
