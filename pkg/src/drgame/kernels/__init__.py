"""Hot kernels with a numba path and a pure-numpy fallback.

The numba versions are used unless ``DRGAME_DISABLE_NUMBA`` is set to a
non-empty value other than ``0`` (or numba cannot be imported).
"""
import os

from . import _numpy_impl

_disabled = os.environ.get("DRGAME_DISABLE_NUMBA", "") not in ("", "0")

if _disabled:
    _impl = _numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _numba_impl as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        _impl = _numpy_impl
        BACKEND = "numpy"

minimax = _impl.minimax
split_minimax = _impl.split_minimax
settle_payoffs = _impl.settle_payoffs

__all__ = ["BACKEND", "minimax", "split_minimax", "settle_payoffs"]
