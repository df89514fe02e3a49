"""Kernel backend selection.

The hot inner loops in :mod:`qcsim.kernels` are compiled with numba when it
is importable. Setting the environment variable ``QCSIM_DISABLE_JIT=1``
(before import) forces the pure-Python/numpy fallback: the exact same source
runs interpreted. ``benchmarks/bench_backends.py`` times both paths.
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("QCSIM_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")


JIT_ENABLED = _HAVE_NUMBA and not _env_disabled()
BACKEND = "numba" if JIT_ENABLED else "python"


def maybe_njit(func):
    """Compile ``func`` with ``numba.njit(cache=True)`` when the jit backend is active."""
    if JIT_ENABLED:
        return numba.njit(cache=True)(func)
    return func
