"""Numba switch.

Set ``CLIMRT_DISABLE_NUMBA=1`` before import to run every hot kernel on its
pure-numpy path. :func:`set_backend` flips the choice at runtime (tests and the
benchmark use it to compare both paths).
"""

import os
import warnings

_TRUTHY = {"1", "true", "yes", "on"}

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    warnings.warn("numba not importable; falling back to numpy kernels")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba_njit(*args, **kwargs)


_backend = "numba" if HAVE_NUMBA else "numpy"
if os.environ.get("CLIMRT_DISABLE_NUMBA", "").strip().lower() in _TRUTHY:
    _backend = "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous choice."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def use_numba() -> bool:
    return _backend == "numba"
