"""NumPy reference implementation of the pairwise-proximity kernels.

This is the fallback backend used when the compiled extension is not
available.  Inputs are per-token unit vectors plus squared-chord thresholds
(prepared by panosphere.mask); a pair is allowed when

    |v_q - v_k|^2 <= ref2

which is monotone-equivalent to comparing the great-circle distance against
the original angular threshold.  Only IEEE add/sub/mul feature in the inner
loop, so the compiled backend produces bitwise-identical index sets.  Keep
the association order ``(dx*dx + dy*dy) + dz*dz`` in both.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_BLOCK = 256


def _chord_sq_block(v_q, v):
    dx = v[None, :, 0] - v_q[:, None, 0]
    dy = v[None, :, 1] - v_q[:, None, 1]
    dz = v[None, :, 2] - v_q[:, None, 2]
    return (dx * dx + dy * dy) + dz * dz


def mask_pairs(vectors, ref2):
    """All ordered pairs (q, k) with squared chord <= ref2, as CSR arrays.

    Returns ``(indptr, indices)`` with ``indptr`` int64 of length n+1 and
    ``indices`` uint32 sorted within each row.
    """
    v = np.ascontiguousarray(vectors, dtype=np.float64)
    n = v.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    chunks = []
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        hits = _chord_sq_block(v[start:stop], v) <= ref2
        counts[start:stop] = hits.sum(axis=1)
        _, cols = np.nonzero(hits)
        chunks.append(cols.astype(np.uint32))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = (
        np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint32)
    )
    return indptr, indices


def count_leq(vectors, refs2):
    """Pair counts at each squared-chord threshold (sorted ascending)."""
    v = np.ascontiguousarray(vectors, dtype=np.float64)
    refs2 = np.asarray(refs2, dtype=np.float64)
    n = v.shape[0]
    m = refs2.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        d2 = _chord_sq_block(v[start:stop], v)
        # first threshold admitting each pair, accumulated as a prefix sum
        first = np.searchsorted(refs2, d2.ravel(), side="left")
        hist = np.bincount(first[first < m], minlength=m)
        counts += np.cumsum(hist)
    return counts
