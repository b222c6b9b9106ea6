"""Select the tree kernel backend at import time.

The compiled extension is used when importable; ``CANOPY_PURE_PYTHON=1``
forces the numpy implementation.
"""

import os

if os.environ.get("CANOPY_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as kernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        from . import _pykernels as kernels

BACKEND = kernels.NAME
