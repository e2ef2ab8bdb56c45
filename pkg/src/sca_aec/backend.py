"""Kernel backend selection.

Hot inner loops (convolutions, LSTM recursion, image-source accumulation)
exist in two interchangeable implementations: a numba ``@njit`` version and a
pure-numpy version.  ``SCA_AEC_BACKEND=numpy`` forces the numpy path,
``SCA_AEC_BACKEND=numba`` requires numba; unset picks numba when importable.

Both paths compute the same quantities; they may differ in the last float
bits because summation order differs.  A single process always uses one
backend, so determinism within a run is preserved either way.
"""

import os

from .errors import ConfigError

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via SCA_AEC_BACKEND=numpy
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("SCA_AEC_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(f"SCA_AEC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    raise ConfigError("SCA_AEC_BACKEND=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """Apply numba.njit with caching, or return ``func`` unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, fastmath=False)(func)
    return func


def thread_limit() -> int:
    """Worker-process cap for dataset-parallel commands (SCA_AEC_THREADS)."""
    raw = os.environ.get("SCA_AEC_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SCA_AEC_THREADS must be an integer, got {raw!r}")
    return max(1, n)
