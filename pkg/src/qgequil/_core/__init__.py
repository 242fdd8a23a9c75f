"""Kernel lane selection: compiled Cython extension when importable, numpy
fallback otherwise.  Set QGEQUIL_PURE_PYTHON=1 to force the fallback."""

import os

if os.environ.get("QGEQUIL_PURE_PYTHON"):
    from . import py_kernels as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import py_kernels as kernels  # type: ignore[no-redef]

HAVE_COMPILED = bool(kernels.COMPILED)

__all__ = ["kernels", "HAVE_COMPILED"]
