"""Numba switch.

Set ``AABAUDIT_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
When numba is not installed the numpy kernels are used silently.
"""
import os

_FLAG = os.environ.get("AABAUDIT_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator.

    Kernels decorated here are only *dispatched* to when ``USE_NUMBA`` is true,
    but they are still compiled lazily so tests can compare both paths.
    """
    if _njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)
