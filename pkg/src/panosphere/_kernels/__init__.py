"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
NumPy reference implementation is used.  ``PANOSPHERE_BACKEND=python`` forces
the fallback, ``PANOSPHERE_BACKEND=compiled`` refuses to start without the
extension (useful in CI).  Both backends are importable side by side for
cross-checking and benchmarks.
"""

from __future__ import annotations

import os

from . import reference as python_backend

try:
    from . import _pairwise as compiled_backend
except ImportError:
    compiled_backend = None

_requested = os.environ.get("PANOSPHERE_BACKEND", "auto")
if _requested == "python":
    active = python_backend
elif _requested == "compiled":
    if compiled_backend is None:
        raise ImportError(
            "PANOSPHERE_BACKEND=compiled but the extension is not built"
        )
    active = compiled_backend
elif _requested == "auto":
    active = compiled_backend if compiled_backend is not None else python_backend
else:
    raise ValueError(f"unknown PANOSPHERE_BACKEND value: {_requested!r}")

BACKEND_NAME = active.NAME

mask_pairs = active.mask_pairs
count_leq = active.count_leq
