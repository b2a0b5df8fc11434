"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set
``DIVDRIVE_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
active implementation.
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("DIVDRIVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
points_in_polygon = _impl.points_in_polygon

__all__ = ["BACKEND", "im2col", "col2im", "points_in_polygon"]
