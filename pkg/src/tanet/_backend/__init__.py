"""Kernel backend selection.

The hot inner loops (channel extrema, level discretization, level
gather/scatter, depthwise dilated convolution) exist twice: a compiled
Cython extension (``tanet._backend._ckern``) and a NumPy fallback
(``tanet._backend.pykern``).  One of them is picked at import time:

* ``TANET_KERNELS=cython``  require the compiled extension, fail otherwise
* ``TANET_KERNELS=python``  force the NumPy fallback
* unset / ``auto``          compiled if available, NumPy otherwise

``tanet bench-backends`` compares the two on identical inputs.
"""

import os

from tanet._backend import pykern

_VALID = ("auto", "cython", "python")


def load_backend(name):
    """Import and return a specific backend module ('cython' or 'python')."""
    if name == "python":
        return pykern
    if name == "cython":
        from tanet._backend import _ckern

        return _ckern
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {_VALID}")


def _select():
    requested = os.environ.get("TANET_KERNELS", "auto").strip().lower()
    if requested not in _VALID:
        raise ValueError(
            f"TANET_KERNELS={requested!r} not understood; expected one of {_VALID}"
        )
    if requested == "python":
        return pykern
    try:
        return load_backend("cython")
    except ImportError:
        if requested == "cython":
            raise
        return pykern


kernels = _select()
KERNEL_BACKEND = kernels.NAME


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
