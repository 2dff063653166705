"""Hot-loop kernels for the relation-recognition cells.

The compiled Cython core is used when available; the numpy fallback is
selected otherwise, or when LEXREL_PURE_PYTHON is set in the environment.
Both implement the same contract (see `_cell_np`) and agree to floating-
point reordering tolerance.
"""

import os

from . import _cell_np

if os.environ.get("LEXREL_PURE_PYTHON"):
    _impl = _cell_np
    BACKEND = "numpy"
else:
    try:
        from . import _cell_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _cell_np
        BACKEND = "numpy"

cell_forward = _impl.cell_forward
cell_backward = _impl.cell_backward

__all__ = ["cell_forward", "cell_backward", "BACKEND"]
