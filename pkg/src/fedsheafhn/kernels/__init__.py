"""Hot kernels with a compiled (Cython) backend and a pure-Python fallback.

The compiled extension is used when it was built; set
``FEDSHEAFHN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("FEDSHEAFHN_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = _impl.BACKEND

sheaf_laplacian = _impl.sheaf_laplacian
sheaf_laplacian_backward = _impl.sheaf_laplacian_backward
grow_partition = _impl.grow_partition
refine_partition = _impl.refine_partition

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "sheaf_laplacian",
    "sheaf_laplacian_backward",
    "grow_partition",
    "refine_partition",
]
