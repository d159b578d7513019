"""Picks the compiled raster kernels when available, else the numpy fallback.

Set ``RELAY_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("RELAY_PURE_PYTHON"):
    from . import _fallback as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _fallback as _impl

BACKEND = _impl.NAME

(P_CX, P_CY, P_A, P_B, P_COS, P_SIN,
 I_CX, I_CY, I_A, I_B, I_COS, I_SIN,
 C_CX, C_CY, C_R, BG) = range(16)
NPARAM = 16

render_roi = _impl.render_roi
detect = _impl.detect
measure_batch = _impl.measure_batch
