"""JIT plumbing: numba-compiled kernels with a pure-Python fallback.

Every hot kernel in the package is decorated with :func:`njit` from this
module.  When numba is importable and the environment variable
``HSFLUCT_NUMBA`` is unset (or set to anything other than ``0``, ``false``,
``off``, ``no``), kernels are compiled with ``numba.njit(cache=True)``.
Otherwise the decorator is a no-op and the same source runs as plain
Python/numpy.  Both paths compute identical results (the fallback is just
orders of magnitude slower); ``bench/bench_jit.py`` compares them.
"""

import os

_FLAG = os.environ.get("HSFLUCT_NUMBA", "1").strip().lower()
JIT_REQUESTED = _FLAG not in ("0", "false", "off", "no")

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

JIT_ENABLED = JIT_REQUESTED and HAVE_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when JIT is enabled, identity decorator otherwise."""
    if JIT_ENABLED:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if args and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap


if JIT_ENABLED:
    from numba import prange
else:
    prange = range
