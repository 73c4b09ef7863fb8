"""Kernel backend selection.

The hot numeric kernels exist twice: a numba ``@njit`` implementation in
``_kernels_nb`` and a vectorized pure-numpy implementation in ``_kernels_np``.
The active backend is chosen once at import time from the ``LHKIT_BACKEND``
environment variable:

    LHKIT_BACKEND=auto    use numba when importable, else numpy (default)
    LHKIT_BACKEND=numba   require numba, fail if unavailable
    LHKIT_BACKEND=numpy   force the pure-numpy path

Both backends compute the same quantities; results may differ at the level of
floating-point rounding (summation order), which the test suite bounds.
"""

from __future__ import annotations

import os

_VALID = ("auto", "numba", "numpy")


def _requested() -> str:
    value = os.environ.get("LHKIT_BACKEND", "auto").strip().lower()
    if value not in _VALID:
        raise RuntimeError(
            f"LHKIT_BACKEND must be one of {_VALID}, got {value!r}"
        )
    return value


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _select() -> str:
    requested = _requested()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _numba_available():
            raise RuntimeError("LHKIT_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"


ACTIVE_BACKEND = _select()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return ACTIVE_BACKEND
