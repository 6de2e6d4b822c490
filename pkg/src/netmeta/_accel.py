"""Optional numba acceleration.

Set ``NETMETA_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The flag is
read once at import time; :func:`use_numba` reports the active choice.
"""

from __future__ import annotations

import os

_FLAG = "NETMETA_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_DISABLED = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def use_numba() -> bool:
    return USE_NUMBA


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged.

    The uncompiled loop versions are never dispatched to when numba is
    missing; they are kept importable so tests can still exercise them.
    """
    if _numba is None:  # pragma: no cover
        return func
    return _numba.njit(cache=True, fastmath=False)(func)
