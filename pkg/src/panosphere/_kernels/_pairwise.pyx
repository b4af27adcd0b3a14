# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise-proximity kernels (hot loop of sparse mask construction).

Must stay result-identical to panosphere._kernels.reference: pairs are
compared by squared chord length against a precomputed threshold; the inner
loop uses only IEEE add/sub/mul in the association order
``(dx*dx + dy*dy) + dz*dz``, so both backends emit bitwise-identical sets.
Keep builds free of FMA contraction (see setup.py).
"""

import numpy as np

NAME = "compiled"


def mask_pairs(vectors, double ref2):
    """All ordered pairs (q, k) with squared chord <= ref2, as CSR arrays."""
    cdef double[:, ::1] v = np.ascontiguousarray(vectors, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t q, k
    cdef double dx, dy, dz

    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] indptr = indptr_arr
    cdef long long total = 0

    with nogil:
        for q in range(n):
            for k in range(n):
                dx = v[k, 0] - v[q, 0]
                dy = v[k, 1] - v[q, 1]
                dz = v[k, 2] - v[q, 2]
                if (dx * dx + dy * dy) + dz * dz <= ref2:
                    total += 1
            indptr[q + 1] = total

    indices_arr = np.empty(total, dtype=np.uint32)
    cdef unsigned int[::1] indices = indices_arr
    cdef long long pos = 0

    with nogil:
        for q in range(n):
            for k in range(n):
                dx = v[k, 0] - v[q, 0]
                dy = v[k, 1] - v[q, 1]
                dz = v[k, 2] - v[q, 2]
                if (dx * dx + dy * dy) + dz * dz <= ref2:
                    indices[pos] = <unsigned int> k
                    pos += 1

    return indptr_arr, indices_arr


def count_leq(vectors, refs2):
    """Pair counts at each squared-chord threshold (sorted ascending)."""
    cdef double[:, ::1] v = np.ascontiguousarray(vectors, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(refs2, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t m = tv.shape[0]
    cdef Py_ssize_t q, k, lo, hi, mid
    cdef double dx, dy, dz, d2

    hist_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] hist = hist_arr

    with nogil:
        for q in range(n):
            for k in range(n):
                dx = v[k, 0] - v[q, 0]
                dy = v[k, 1] - v[q, 1]
                dz = v[k, 2] - v[q, 2]
                d2 = (dx * dx + dy * dy) + dz * dz
                # first index with tv[idx] >= d2 (same as searchsorted side='left')
                lo = 0
                hi = m
                while lo < hi:
                    mid = (lo + hi) // 2
                    if tv[mid] < d2:
                        lo = mid + 1
                    else:
                        hi = mid
                hist[lo] += 1

    return np.cumsum(hist_arr[:m])
