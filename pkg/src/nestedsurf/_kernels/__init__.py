"""Kernel backend selection.

The compiled extension is preferred; the pure-Python module is a drop-in
replacement producing identical results.  Set NESTEDSURF_FORCE_FALLBACK=1
to skip the extension (used by the benchmark and backend-equality tests).
"""

import os

from . import pyfallback

if os.environ.get("NESTEDSURF_FORCE_FALLBACK", "0") not in ("0", ""):
    _impl = pyfallback
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = pyfallback
        BACKEND = "python"

edt_squared = _impl.edt_squared
marching_cells = _impl.marching_cells
fast_sweep = _impl.fast_sweep
