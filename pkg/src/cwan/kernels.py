"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
``CWAN_PURE_PYTHON`` environment variable is set to a non-empty value,
the numpy fallback is used.  Both expose ``im2col``, ``col2im`` and
``order_flips`` with identical semantics.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("CWAN_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def im2col(xp, k, cols):
    _impl.im2col(xp, k, cols)


def col2im(dcols, dxp, k):
    _impl.col2im(dcols, dxp, k)


def order_flips(a, b):
    return int(_impl.order_flips(a, b))
