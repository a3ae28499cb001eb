"""Select the compiled core when available, else the numpy fallback.

Set ``KERNELSTREAM_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels

_forced = os.environ.get("KERNELSTREAM_BACKEND", "").lower()

if _forced == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _pykernels
        BACKEND = "python"

rbf_cross = _impl.rbf_cross
rbf_gram = _impl.rbf_gram
chol_append = _impl.chol_append
probe_append = _impl.probe_append

__all__ = ["BACKEND", "rbf_cross", "rbf_gram", "chol_append", "probe_append"]
