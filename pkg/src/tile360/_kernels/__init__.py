"""Speedup kernels with backend selection at import.

The compiled Cython extension is preferred; the pure numpy fallback is
used when the extension is unavailable or TILE360_PURE_PYTHON=1 is set.
"""

import os

from . import _pure

if os.environ.get("TILE360_PURE_PYTHON", "") == "1":
    _impl = _pure
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
grid_sin_lat_extremes = _impl.grid_sin_lat_extremes
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
