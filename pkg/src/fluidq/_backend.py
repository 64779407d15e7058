"""Select the compiled kernels when available, else the pure-Python ones.

Set ``FLUIDQ_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("FLUIDQ_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND
