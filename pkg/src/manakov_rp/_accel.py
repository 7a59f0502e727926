"""Optional numba acceleration.

Hot kernels ship in two flavours: a compiled loop version and a vectorized
numpy version. The environment variable ``MANAKOV_RP_NUMBA`` selects the
default (``0``/``false``/``off`` forces numpy). Both flavours stay importable
so tests and benchmarks can compare them in one process.
"""
import os

ENV_FLAG = "MANAKOV_RP_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency
    _numba = None


def _flag_enabled():
    value = os.environ.get(ENV_FLAG, "1").strip().lower()
    return value not in ("0", "false", "no", "off")


HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def njit(func=None, **options):
    """Compile ``func`` with numba when available, else return it unchanged."""
    options.setdefault("cache", True)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return _numba.njit(**options)(f)

    if func is None:
        return wrap
    return wrap(func)


def resolve_backend(backend=None):
    """Map ``None``/``"auto"``/``"numba"``/``"numpy"`` to a concrete backend name."""
    if backend in (None, "auto"):
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
