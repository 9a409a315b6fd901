"""Hot numerical kernels.

The compiled Cython module ``_core`` is used when it was built; otherwise,
or when ``KVNSIM_PURE_PYTHON=1`` is set, the numpy fallback is used.
``BACKEND`` names the active implementation.
"""
import os

from . import _fallback

if os.environ.get("KVNSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

periodic_interp = _impl.periodic_interp
ae_loglik = _impl.ae_loglik

__all__ = ["BACKEND", "periodic_interp", "ae_loglik"]
