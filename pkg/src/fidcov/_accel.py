"""Switch between numba-compiled kernels and the pure-numpy fallback.

Set ``FIDCOV_NUMBA=0`` in the environment before import to run every hot
kernel through its numpy implementation instead.
"""
import os

_FLAG = os.environ.get("FIDCOV_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` in nopython mode; identity when numba is unavailable."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True, nogil=True)(func)
