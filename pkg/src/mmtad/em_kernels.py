"""Select the compiled EM kernels when available, else the numpy fallback.

Set ``MMTAD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _em_py

BACKEND = "python"
if os.environ.get("MMTAD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _em_core as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _em_py
else:
    _impl = _em_py

estep = _impl.estep
mstep = _impl.mstep
