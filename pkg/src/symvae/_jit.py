"""Switch between numba-compiled kernels and the pure-numpy fallback.

Set ``SYMVAE_DISABLE_JIT=1`` in the environment before import to force the
numpy path (numba missing has the same effect).
"""
import os

_FLAG = os.environ.get("SYMVAE_DISABLE_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USE_JIT = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_JIT else "numpy"
