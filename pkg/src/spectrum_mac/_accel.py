"""Backend switch for the hot kernels.

Every kernel ships twice: a numba ``@njit`` loop and a vectorised numpy
version.  ``SPECTRUM_MAC_BACKEND=numpy`` (or ``SPECTRUM_MAC_DISABLE_NUMBA=1``)
selects the numpy path at import time; the default is numba when it imports.
Both paths consume identical pre-drawn random inputs, so they produce the
same outputs and can be cross-checked.
"""

from __future__ import annotations

import os

_env_backend = os.environ.get("SPECTRUM_MAC_BACKEND", "").strip().lower()
_env_disable = os.environ.get("SPECTRUM_MAC_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

if _env_backend not in ("", "numba", "numpy"):
    raise ValueError(f"SPECTRUM_MAC_BACKEND must be 'numba' or 'numpy', got {_env_backend!r}")

USE_NUMBA = HAS_NUMBA and not _env_disable and _env_backend != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
