"""Convolution kernel backend selection.

The compiled Cython extension is used when available; a pure-numpy im2col
implementation is the fallback. Selection happens once at import time and
can be forced with the environment variable ``TOMLAB_KERNELS``:

    TOMLAB_KERNELS=compiled   require the extension (ImportError if missing)
    TOMLAB_KERNELS=fallback   force the numpy implementation
    TOMLAB_KERNELS=auto       compiled if importable, else fallback (default)

Both backends implement the identical contract and are cross-checked in the
test suite; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

from . import _kernels_np

_choice = os.environ.get("TOMLAB_KERNELS", "auto").lower()

if _choice == "fallback":
    _impl = _kernels_np
elif _choice == "compiled":
    from . import _kernels_cy as _impl  # type: ignore[no-redef]
elif _choice == "auto":
    try:
        from . import _kernels_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_np
else:
    raise RuntimeError(f"TOMLAB_KERNELS must be auto/compiled/fallback, got {_choice!r}")

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def backend_name() -> str:
    return _impl.BACKEND
