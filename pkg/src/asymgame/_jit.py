"""Optional numba acceleration.

Kernels are written in the numpy subset numba understands. When numba is
missing or ``ASYMGAME_DISABLE_NUMBA`` is set to a truthy value, ``njit`` is
the identity and the same functions run as plain numpy.
"""

import os

_FLAG = os.environ.get("ASYMGAME_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    NUMBA_ENABLED = False


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, otherwise a no-op decorator."""
    if not NUMBA_ENABLED:
        if func is None:
            return lambda f: f
        return func
    kwargs.setdefault("cache", True)
    if func is None:
        return numba.njit(**kwargs)
    return numba.njit(**kwargs)(func)
