"""Hot numeric kernels with a compiled core and a NumPy fallback.

The compiled extension (``arenatrack._kernels._core``, built from Cython)
is preferred when present; otherwise the vectorized NumPy implementation
in :mod:`arenatrack._kernels.pyfallback` is used.  Both expose the same
functions and produce matching results.

Set ``ARENATRACK_KERNELS=python`` or ``=compiled`` to force a backend.
"""

import os

from . import pyfallback

_forced = os.environ.get("ARENATRACK_KERNELS", "").strip().lower()

if _forced == "python":
    _impl = pyfallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = pyfallback
        BACKEND = "python"

region_match_counts = _impl.region_match_counts
decode_boxes = _impl.decode_boxes

__all__ = ["BACKEND", "region_match_counts", "decode_boxes", "pyfallback"]
