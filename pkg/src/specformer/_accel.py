"""Backend selection for the compiled kernels.

Set ``SPECFORMER_DISABLE_NUMBA=1`` in the environment to force the pure-numpy
kernels. The choice is made once, at import time.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_disabled() -> bool:
    return os.environ.get("SPECFORMER_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _numba = None

USE_NUMBA = _numba is not None and not _numba_disabled()


def njit(fn):
    """Compile ``fn`` with numba in nopython mode (no fastmath, for bitwise reproducibility)."""
    if _numba is None:  # pragma: no cover
        return fn
    return _numba.njit(cache=True, fastmath=False, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
