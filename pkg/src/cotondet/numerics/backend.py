"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the numpy
implementations take over. ``use()`` switches backends temporarily, which
the benchmark and the cross-backend tests rely on.
"""
from contextlib import contextmanager

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _BACKENDS.get("compiled", _pykernels)


def available():
    return sorted(_BACKENDS)


def name():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def kernels():
    return _active


@contextmanager
def use(backend):
    """Temporarily route kernel calls through ``backend`` ("compiled" or "python")."""
    global _active
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} unavailable; have {available()}")
    previous = _active
    _active = _BACKENDS[backend]
    try:
        yield
    finally:
        _active = previous
