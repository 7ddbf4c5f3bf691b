"""
jit.py
------
Optional numba acceleration for the dynamic-programming kernels.

When numba is importable, ``njit`` compiles with the settings in
``NUMBA_DEFAULT``; otherwise it hands back the plain Python function so every
kernel stays importable and correct, only slower.
"""

from __future__ import annotations

import logging

logger = logging.getLogger(__name__)

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

NUMBA_DEFAULT = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
    "error_model": "numpy",
}


def njit(func=None, **overrides):
    """Compile ``func`` with numba if available, else return it unchanged.

    Usable bare (``@njit``) or with settings overrides (``@njit(cache=False)``).
    """

    def decorator(f):
        if not NUMBA_AVAILABLE:
            logger.debug("numba not available, %s runs in pure Python", f.__name__)
            return f
        settings = dict(NUMBA_DEFAULT)
        settings.update(overrides)
        return numba.jit(**settings)(f)

    if func is not None:
        return decorator(func)
    return decorator
